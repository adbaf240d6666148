import type { Recommendation } from './types';

/**
 * Next-meal recommendation panel. Item names, portions and nutrient numbers
 * come from the server response untouched.
 */
export function renderRecommendation(container: HTMLElement, rec: Recommendation): void {
  const doc = container.ownerDocument;
  container.replaceChildren();

  const heading = doc.createElement('h2');
  heading.textContent = rec.mealtime ? `Next meal: ${rec.mealtime}` : 'Next meal';
  container.appendChild(heading);

  if (rec.conservative) {
    const badge = doc.createElement('span');
    badge.className = 'conservative-badge';
    badge.textContent = 'conservative suggestion';
    container.appendChild(badge);
  }

  const note = doc.createElement('p');
  note.className = 'recommendation-note';
  note.textContent = rec.note;
  container.appendChild(note);

  const list = doc.createElement('ul');
  list.className = 'recommended-items';
  for (const item of rec.items) {
    const entry = doc.createElement('li');
    entry.dataset.name = item.name;
    entry.dataset.cuisine = item.cuisine;
    const title = doc.createElement('strong');
    title.textContent = item.name;
    entry.appendChild(title);
    const portion = doc.createElement('span');
    portion.className = 'portion';
    portion.textContent = item.portion_g ? ` ${String(item.portion_g)} g` : ' as desired';
    entry.appendChild(portion);
    if ('energy' in item.nutrients) {
      const energy = doc.createElement('span');
      energy.className = 'energy';
      energy.textContent = ` (${String(item.nutrients.energy)} kcal)`;
      entry.appendChild(energy);
    }
    list.appendChild(entry);
  }
  if (!rec.items.length) {
    const empty = doc.createElement('li');
    empty.className = 'empty';
    empty.textContent = 'No suitable items found.';
    list.appendChild(empty);
  }
  container.appendChild(list);
}
