import { NutriloopClient } from './api';
import { renderDashboard } from './dashboard';
import { renderProfileEditor } from './profile';
import { renderRecommendation } from './recommendation';
import { UiSession } from './session';
import { MealUploadQueue } from './upload';

/** Entry point when served as a static page next to the running service. */
function todayIso(): string {
  return new Date().toISOString().slice(0, 10);
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get('api') ?? 'http://127.0.0.1:8060';
  const token = params.get('token') ?? 'local-dev-token';
  const userId = params.get('user') ?? 'demo-user';

  const client = new NutriloopClient(baseUrl, token, userId);
  const session = new UiSession(client, params.get('date') ?? todayIso());

  const dashboardEl = document.getElementById('dashboard') as HTMLElement;
  const recommendationEl = document.getElementById('recommendation') as HTMLElement;
  const profileEl = document.getElementById('profile') as HTMLElement;
  const uploadForm = document.getElementById('upload-form') as HTMLFormElement;
  const uploadStatus = document.getElementById('upload-status') as HTMLElement;

  const queue = new MealUploadQueue(client, {
    onChange: (uploads) => {
      const current = uploads[uploads.length - 1];
      if (!current) return;
      uploadStatus.textContent =
        current.status === 'uploading'
          ? 'Uploading meal...'
          : current.notice ?? `Upload ${current.status}.`;
      uploadStatus.dataset.status = current.status;
    },
  });

  const refresh = async (): Promise<void> => {
    const plan = await session.refreshPlan();
    renderDashboard(dashboardEl, plan);
    try {
      const { recommendation } = await client.getRecommendation(session.selectedDate);
      renderRecommendation(recommendationEl, recommendation);
    } catch {
      recommendationEl.textContent = 'No recommendation available right now.';
    }
  };

  uploadForm.addEventListener('submit', async (event) => {
    event.preventDefault();
    const fileInput = uploadForm.querySelector<HTMLInputElement>('input[type="file"]');
    const noteInput = uploadForm.querySelector<HTMLInputElement>('input[name="note"]');
    const mealtimeSelect = uploadForm.querySelector<HTMLSelectElement>('select[name="mealtime"]');
    const upload = await queue.submit({
      date: session.selectedDate,
      mealtime: mealtimeSelect?.value ?? 'lunch',
      text: noteInput?.value || undefined,
      image: fileInput?.files?.[0] ?? undefined,
      imageName: fileInput?.files?.[0]?.name,
    });
    if (upload.status === 'done') await refresh();
  });

  const profile = await client.getProfile();
  renderProfileEditor(profileEl, profile, async (updated) => {
    const saved = await client.putProfile(updated);
    await refresh();
    return saved;
  });

  await refresh();
}

window.addEventListener('DOMContentLoaded', () => {
  void start();
});
