// View state for the two annotation tasks, kept free of DOM concerns so the
// submit-gating and permutation logic is directly testable.

import { RANKING_SLOTS } from "./types.js";

export class GroundingState {
  private selected: number | null = null;

  select(rating: number): void {
    if (!Number.isInteger(rating) || rating < 1 || rating > 4) {
      throw new Error(`rating out of range: ${rating}`);
    }
    this.selected = rating;
  }

  clear(): void {
    this.selected = null;
  }

  get rating(): number | null {
    return this.selected;
  }

  // Submit stays disabled until a complete judgment (one rating) exists.
  canSubmit(): boolean {
    return this.selected !== null;
  }

  payload(): { rating: number } {
    if (this.selected === null) {
      throw new Error("no rating selected");
    }
    return { rating: this.selected };
  }
}

export class RankingState {
  // order[i] = presentation-slot index currently shown at position i;
  // position 0 is "least abstract" (rank 1).
  private order: number[];

  constructor(slotCount: number = RANKING_SLOTS) {
    if (slotCount !== RANKING_SLOTS) {
      throw new Error(`ranking tasks have exactly ${RANKING_SLOTS} captions`);
    }
    this.order = Array.from({ length: slotCount }, (_, i) => i);
  }

  get positions(): readonly number[] {
    return this.order;
  }

  moveUp(position: number): void {
    if (position > 0 && position < this.order.length) {
      [this.order[position - 1], this.order[position]] = [
        this.order[position],
        this.order[position - 1],
      ];
    }
  }

  moveDown(position: number): void {
    if (position >= 0 && position < this.order.length - 1) {
      [this.order[position], this.order[position + 1]] = [
        this.order[position + 1],
        this.order[position],
      ];
    }
  }

  // Drag-and-drop: take the item at `from` and insert it at `to`.
  moveTo(from: number, to: number): void {
    if (
      from < 0 ||
      from >= this.order.length ||
      to < 0 ||
      to >= this.order.length ||
      from === to
    ) {
      return;
    }
    const [slot] = this.order.splice(from, 1);
    this.order.splice(to, 0, slot);
  }

  // A full order always exists by construction, so ranking submissions are
  // complete from the start.
  canSubmit(): boolean {
    return isPermutationOfSlots(this.order);
  }

  // ranking[slot] = rank 1..6 assigned to the caption presented at `slot`.
  toRanking(): number[] {
    const ranking = new Array<number>(this.order.length);
    this.order.forEach((slot, position) => {
      ranking[slot] = position + 1;
    });
    return ranking;
  }

  payload(): { ranking: number[] } {
    return { ranking: this.toRanking() };
  }
}

function isPermutationOfSlots(values: readonly number[]): boolean {
  if (values.length !== RANKING_SLOTS) {
    return false;
  }
  const seen = new Set(values);
  return (
    seen.size === RANKING_SLOTS &&
    values.every((v) => Number.isInteger(v) && v >= 0 && v < RANKING_SLOTS)
  );
}

// Client-side mirrors of the server's submission validation; every
// UI-constructible payload must satisfy these.
export function isValidRating(rating: unknown): rating is number {
  return (
    typeof rating === "number" && Number.isInteger(rating) && rating >= 1 && rating <= 4
  );
}

export function isValidRanking(ranking: unknown): ranking is number[] {
  if (!Array.isArray(ranking) || ranking.length !== RANKING_SLOTS) {
    return false;
  }
  const sorted = [...ranking].sort((a, b) => a - b);
  return sorted.every((value, index) => value === index + 1);
}
