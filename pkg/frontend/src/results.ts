import { QueryResult } from "./api.js";

// Renders the ranked list exactly as the service returned it: same order,
// scores to 3 decimals. Reordering or filtering here would silently change
// what the retrieval engine said.

export function renderResults(
  container: HTMLElement,
  results: QueryResult[],
  onPlay: (motionId: string) => void,
): void {
  container.replaceChildren();
  for (const result of results) {
    const card = document.createElement("li");
    card.className = "result-card";
    card.dataset.motionId = result.motion_id;

    const rank = document.createElement("span");
    rank.className = "rank";
    rank.textContent = `#${result.rank}`;

    const name = document.createElement("span");
    name.className = "motion-id";
    name.textContent = result.motion_id;

    const score = document.createElement("span");
    score.className = "score";
    score.textContent = result.score.toFixed(3);

    const play = document.createElement("button");
    play.className = "play-btn";
    play.type = "button";
    play.textContent = "play";
    play.addEventListener("click", () => onPlay(result.motion_id));

    const error = document.createElement("span");
    error.className = "card-error";

    card.append(rank, name, score, play, error);
    container.appendChild(card);
  }
}

function escapeAttr(value: string): string {
  return value.replace(/\\/g, "\\\\").replace(/"/g, '\\"');
}

export function setCardError(container: HTMLElement, motionId: string, message: string): void {
  const card = container.querySelector<HTMLElement>(
    `li[data-motion-id="${escapeAttr(motionId)}"] .card-error`,
  );
  if (card) card.textContent = message;
}
