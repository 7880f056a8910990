/** DOM wiring for the review queue; all state lives in ReviewQueue. */
import { ReviewApi } from "./api.js";
import { actionForKey, bindingHelp } from "./keyboard.js";
import { ReviewQueue } from "./queue.js";
function el(tag, className, text) {
    const node = document.createElement(tag);
    if (className)
        node.className = className;
    if (text !== undefined)
        node.textContent = text;
    return node;
}
/** Highlight the substituted novel word (singular or plural form). */
export function captionHtml(record) {
    const forms = new Set([
        record.novel_class,
        `${record.novel_class}s`,
        `${record.novel_class}es`,
    ]);
    const p = el("p", "caption");
    for (const token of record.caption_tokens) {
        if (forms.has(token)) {
            const mark = el("mark", "novel-word", token);
            p.appendChild(mark);
        }
        else {
            p.appendChild(document.createTextNode(token));
        }
        p.appendChild(document.createTextNode(" "));
    }
    return p;
}
function imageCard(url, label) {
    const card = el("figure", "image-card");
    const img = el("img");
    img.src = url;
    img.alt = label;
    img.onerror = () => {
        img.remove();
        const placeholder = el("div", "placeholder", "image unavailable");
        const retry = el("button", "retry", "retry");
        retry.onclick = () => {
            placeholder.remove();
            img.src = `${url}${url.includes("?") ? "&" : "?"}retry=${Date.now()}`;
            card.prepend(img);
        };
        placeholder.appendChild(retry);
        card.prepend(placeholder);
    };
    card.appendChild(img);
    card.appendChild(el("figcaption", undefined, label));
    return card;
}
function provenancePanel(record) {
    const panel = el("dl", "provenance");
    const add = (k, v) => {
        panel.appendChild(el("dt", undefined, k));
        panel.appendChild(el("dd", undefined, v));
    };
    add("novel class", record.novel_class);
    add("candidate class", record.candidate_class);
    add("target image", String(record.target_image_id));
    record.replacements.forEach((rep, i) => {
        add(`replacement ${i + 1}`, `source ${rep.novel_image_id}#${rep.novel_instance_id} ` +
            `box [${rep.novel_box.map((v) => v.toFixed(0)).join(", ")}] -> ` +
            `box [${rep.cand_box.map((v) => v.toFixed(0)).join(", ")}]`);
    });
    return panel;
}
export function renderPair(root, record) {
    root.replaceChildren();
    const images = el("div", "images");
    images.appendChild(imageCard(record.image_url, "synthetic"));
    images.appendChild(imageCard(record.target_image_url, "target original"));
    record.source_image_urls.forEach((url, i) => {
        images.appendChild(imageCard(url, `source original ${i + 1}`));
    });
    root.appendChild(images);
    root.appendChild(captionHtml(record));
    root.appendChild(provenancePanel(record));
}
function renderDone(root, counts) {
    root.replaceChildren();
    const done = el("div", "done");
    done.appendChild(el("h2", undefined, "queue complete"));
    done.appendChild(el("p", undefined, `accepted ${counts.accepted} / rejected ${counts.rejected} / ` +
        `pending ${counts.pending}`));
    root.appendChild(done);
}
function renderStatusBar(bar, queue) {
    const view = queue.view();
    bar.replaceChildren();
    bar.appendChild(el("span", "position", view.done ? "done" : `${view.position} / ${view.total}`));
    bar.appendChild(el("span", "counts", `pending ${view.counts.pending} · accepted ${view.counts.accepted} · ` +
        `rejected ${view.counts.rejected}`));
    const queued = view.submissions.filter((s) => s.state === "queued-retry");
    if (queued.length > 0) {
        bar.appendChild(el("span", "retry-status", `${queued.length} verdict(s) awaiting retry (press t)`));
    }
    const saving = view.submissions.filter((s) => s.state === "saving");
    if (saving.length > 0) {
        bar.appendChild(el("span", "saving", "saving…"));
    }
    if (view.lastError) {
        bar.appendChild(el("span", "error", view.lastError));
    }
}
export async function start() {
    const root = document.getElementById("pair");
    const bar = document.getElementById("status");
    const help = document.getElementById("help");
    help.textContent = bindingHelp().join("   ");
    const api = new ReviewApi("");
    const reviewer = new URLSearchParams(window.location.search).get("reviewer") ?? "anonymous";
    const queue = new ReviewQueue(api, reviewer);
    const redraw = () => {
        const view = queue.view();
        renderStatusBar(bar, queue);
        if (view.current === null) {
            renderDone(root, view.counts);
        }
        else {
            renderPair(root, view.current);
        }
    };
    queue.onChange(redraw);
    document.addEventListener("keydown", (event) => {
        const action = actionForKey(event.key);
        if (action === null)
            return;
        event.preventDefault();
        if (action === "accept")
            void queue.submit("accepted");
        else if (action === "reject")
            void queue.submit("rejected");
        else if (action === "skip")
            queue.skip();
        else if (action === "undo")
            void queue.undo();
        else if (action === "retry")
            void queue.retryQueued();
        else if (action === "help")
            alert(bindingHelp().join("\n"));
    });
    await queue.load();
}
if (typeof document !== "undefined" && document.getElementById("pair")) {
    void start();
}
