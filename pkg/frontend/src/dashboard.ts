import type { PlanView } from './types';

/**
 * Budget dashboard: one row per tracked core nutrient.
 *
 * Every rendered number is a server response field, verbatim. Bars are
 * <progress> elements fed value/max straight from the plan document, so no
 * nutrition arithmetic happens in the client; an overconsumed nutrient
 * (negative remaining from the server) displays as zero-remaining with an
 * over-limit marker.
 */

const CORE_ORDER = ['energy', 'protein', 'carbohydrate', 'fat', 'fiber', 'sodium'];

const UNIT_LABEL: Record<string, string> = {
  energy: 'kcal',
  protein: 'g',
  carbohydrate: 'g',
  fat: 'g',
  fiber: 'g',
  sodium: 'mg',
};

function amountText(value: number): string {
  return String(value);
}

export function renderDashboard(container: HTMLElement, plan: PlanView): void {
  const doc = container.ownerDocument;
  container.replaceChildren();

  const heading = doc.createElement('h2');
  heading.textContent = `Plan for ${plan.date}`;
  container.appendChild(heading);

  const list = doc.createElement('div');
  list.className = 'budget-rows';
  for (const name of CORE_ORDER) {
    if (!(name in plan.targets)) continue;
    const target = plan.targets[name];
    const consumed = plan.consumed[name] ?? 0;
    const remaining = plan.remaining[name];

    const row = doc.createElement('div');
    row.className = 'budget-row';
    row.dataset.nutrient = name;
    row.dataset.target = String(target);
    row.dataset.consumed = String(consumed);
    row.dataset.remaining = String(remaining);

    const label = doc.createElement('span');
    label.className = 'nutrient-name';
    label.textContent = `${name} (${UNIT_LABEL[name] ?? ''})`;
    row.appendChild(label);

    const bar = doc.createElement('progress');
    bar.max = target;
    bar.value = consumed;
    row.appendChild(bar);

    const numbers = doc.createElement('span');
    numbers.className = 'numbers';
    numbers.textContent = `${amountText(consumed)} of ${amountText(target)}`;
    row.appendChild(numbers);

    const remainingEl = doc.createElement('span');
    remainingEl.className = 'remaining';
    if (remaining < 0) {
      row.classList.add('over-limit');
      remainingEl.textContent = '0 left';
      const marker = doc.createElement('span');
      marker.className = 'over-limit-marker';
      marker.textContent = 'over limit';
      row.appendChild(marker);
    } else {
      remainingEl.textContent = `${amountText(remaining)} left`;
    }
    row.appendChild(remainingEl);

    list.appendChild(row);
  }
  container.appendChild(list);

  const meals = doc.createElement('p');
  meals.className = 'meals-remaining';
  meals.textContent = plan.meals_remaining.length
    ? `Meals remaining: ${plan.meals_remaining.join(', ')}`
    : 'All planned meals logged for today.';
  container.appendChild(meals);

  const logged = doc.createElement('p');
  logged.className = 'meals-logged';
  logged.textContent = `Meals logged: ${plan.meals_logged.length ? plan.meals_logged.join(', ') : 'none yet'}`;
  container.appendChild(logged);
}
