/** Keyboard bindings: the whole review flow is reachable without a mouse. */

export type ReviewAction = "accept" | "reject" | "skip" | "undo" | "retry" | "help";

export const KEY_BINDINGS: Record<string, ReviewAction> = {
  a: "accept",
  y: "accept",
  r: "reject",
  x: "reject",
  s: "skip",
  " ": "skip",
  u: "undo",
  z: "undo",
  t: "retry",
  "?": "help",
};

export function actionForKey(key: string): ReviewAction | null {
  return KEY_BINDINGS[key.toLowerCase()] ?? KEY_BINDINGS[key] ?? null;
}

export function bindingHelp(): string[] {
  const byAction = new Map<ReviewAction, string[]>();
  for (const [key, action] of Object.entries(KEY_BINDINGS)) {
    const keys = byAction.get(action) ?? [];
    keys.push(key === " " ? "space" : key);
    byAction.set(action, keys);
  }
  return Array.from(byAction.entries()).map(
    ([action, keys]) => `${keys.join("/")}: ${action}`,
  );
}
