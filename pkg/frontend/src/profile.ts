import type { Profile } from './types';

const WEIGHT_SUM_TOLERANCE = 1e-9;

export interface ProfileEditorHandles {
  form: HTMLFormElement;
  errorEl: HTMLElement;
  readForm: () => Profile;
  submit: () => Promise<boolean>;
}

/**
 * Habit-weight sums are checked inline before anything is sent; nutrition
 * values never appear here (the profile holds preferences, not nutrients).
 */
export function weightsSumToOne(habits: [string, number][]): boolean {
  let sum = 0;
  for (const [, weight] of habits) sum += weight;
  return Math.abs(sum - 1) <= WEIGHT_SUM_TOLERANCE;
}

export function renderProfileEditor(
  container: HTMLElement,
  profile: Profile,
  save: (profile: Profile) => Promise<Profile>,
): ProfileEditorHandles {
  const doc = container.ownerDocument;
  container.replaceChildren();

  const form = doc.createElement('form');
  form.className = 'profile-editor';

  const habitsField = doc.createElement('fieldset');
  const habitsLegend = doc.createElement('legend');
  habitsLegend.textContent = 'Meal habits (weights must sum to 1)';
  habitsField.appendChild(habitsLegend);
  for (const [mealtime, weight] of profile.meal_habits) {
    const label = doc.createElement('label');
    label.textContent = mealtime;
    const input = doc.createElement('input');
    input.type = 'number';
    input.step = '0.01';
    input.name = `habit-${mealtime}`;
    input.value = String(weight);
    label.appendChild(input);
    habitsField.appendChild(label);
  }
  form.appendChild(habitsField);

  const cuisinesField = doc.createElement('fieldset');
  const cuisinesLegend = doc.createElement('legend');
  cuisinesLegend.textContent = 'Cuisine frequencies (0 to 1)';
  cuisinesField.appendChild(cuisinesLegend);
  for (const [cuisine, freq] of Object.entries(profile.cuisine_frequencies)) {
    const label = doc.createElement('label');
    label.textContent = cuisine;
    const input = doc.createElement('input');
    input.type = 'number';
    input.step = '0.05';
    input.name = `cuisine-${cuisine}`;
    input.value = String(freq);
    label.appendChild(input);
    cuisinesField.appendChild(label);
  }
  form.appendChild(cuisinesField);

  const allergiesLabel = doc.createElement('label');
  allergiesLabel.textContent = 'Allergies (comma separated)';
  const allergiesInput = doc.createElement('input');
  allergiesInput.type = 'text';
  allergiesInput.name = 'allergies';
  allergiesInput.value = profile.allergies.join(', ');
  allergiesLabel.appendChild(allergiesInput);
  form.appendChild(allergiesLabel);

  const errorEl = doc.createElement('p');
  errorEl.className = 'profile-error';
  errorEl.hidden = true;
  form.appendChild(errorEl);

  const saveButton = doc.createElement('button');
  saveButton.type = 'submit';
  saveButton.textContent = 'Save profile';
  form.appendChild(saveButton);

  const readForm = (): Profile => {
    const habits: [string, number][] = profile.meal_habits.map(([mealtime]) => {
      const input = form.querySelector<HTMLInputElement>(`input[name="habit-${mealtime}"]`);
      return [mealtime, Number(input?.value ?? 0)];
    });
    const cuisines: Record<string, number> = {};
    for (const cuisine of Object.keys(profile.cuisine_frequencies)) {
      const input = form.querySelector<HTMLInputElement>(`input[name="cuisine-${cuisine}"]`);
      cuisines[cuisine] = Number(input?.value ?? 0);
    }
    const allergies = allergiesInput.value
      .split(',')
      .map((a) => a.trim())
      .filter((a) => a.length > 0);
    return { ...profile, meal_habits: habits, cuisine_frequencies: cuisines, allergies };
  };

  const submit = async (): Promise<boolean> => {
    const candidate = readForm();
    if (!weightsSumToOne(candidate.meal_habits)) {
      errorEl.textContent = 'Meal habit weights must sum to 1.';
      errorEl.hidden = false;
      return false;
    }
    try {
      await save(candidate);
      errorEl.hidden = true;
      return true;
    } catch (error) {
      errorEl.textContent = error instanceof Error ? error.message : 'Save failed.';
      errorEl.hidden = false;
      return false;
    }
  };

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    void submit();
  });

  container.appendChild(form);
  return { form, errorEl, readForm, submit };
}
