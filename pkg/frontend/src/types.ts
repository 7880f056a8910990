/** Wire types mirroring the review service REST contract. */

export type VerdictStatus = "pending" | "accepted" | "rejected";

/** A decision a reviewer can post; "pending" resets an earlier verdict. */
export type Decision = VerdictStatus;

export interface Replacement {
  novel_image_id: number;
  novel_instance_id: number;
  novel_image_path: string;
  novel_box: number[];
  cand_instance_id: number;
  cand_box: number[];
}

export interface PairRecord {
  synth_id: string;
  image_id: number;
  caption_tokens: string[];
  novel_class: string;
  candidate_class: string;
  target_image_id: number;
  replacements: Replacement[];
  status: VerdictStatus;
  image_url: string;
  target_image_url: string;
  source_image_urls: string[];
}

export interface PairsPage {
  records: PairRecord[];
  next_cursor: string | null;
  counts: Record<VerdictStatus, number>;
}
