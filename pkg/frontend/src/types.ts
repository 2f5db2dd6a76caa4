// Wire types for the annotation service JSON API.

export interface GroundingTask {
  task_id: string;
  type: "grounding";
  image_uri: string;
  caption: string;
}

export interface RankingTask {
  task_id: string;
  type: "ranking";
  image_uri: string;
  captions: string[]; // exactly 6, in the server's presentation order
}

export type Task = GroundingTask | RankingTask;

export interface DonePayload {
  done: true;
}

export interface Submission {
  annotator_id: string;
  task_id: string;
  rating?: number;
  ranking?: number[];
}

export const RATING_DESCRIPTIONS: ReadonlyArray<{ value: number; text: string }> = [
  { value: 1, text: "Completely contradictory to or not relevant to the image" },
  { value: 2, text: "Contains many erroneous details but still describes the image" },
  { value: 3, text: "An almost perfect caption with minor errors" },
  { value: 4, text: "A perfect caption where there are no errors" },
];

export const RANKING_SLOTS = 6;
