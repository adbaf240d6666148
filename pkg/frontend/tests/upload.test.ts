import { describe, expect, it } from 'vitest';

import { ApiRequestError, NutriloopClient } from '../src/api';
import { MealUploadQueue } from '../src/upload';
import type { MealAckResult } from '../src/types';

function fakeClient(behavior: () => Promise<MealAckResult>): NutriloopClient {
  const client = Object.create(NutriloopClient.prototype) as NutriloopClient;
  (client as unknown as { logMeal: () => Promise<MealAckResult> }).logMeal = behavior;
  client.userId = 'u1';
  return client;
}

const SUBMISSION = { date: '2025-06-02', mealtime: 'lunch' as const, text: 'a banana' };

describe('meal upload queue', () => {
  it('resolves done on success and keeps the server result', async () => {
    const queue = new MealUploadQueue(
      fakeClient(async () => ({ meal_id: 'm1' })),
      { backoffMs: 1 },
    );
    const upload = await queue.submit(SUBMISSION);
    expect(upload.status).toBe('done');
    expect(upload.result?.meal_id).toBe('m1');
    expect(upload.attempts).toBe(1);
  });

  it('surfaces duplicates without retrying or double-counting', async () => {
    let calls = 0;
    const queue = new MealUploadQueue(
      fakeClient(async () => {
        calls += 1;
        throw new ApiRequestError('already logged', 409, 'duplicate', false);
      }),
      { backoffMs: 1 },
    );
    const upload = await queue.submit(SUBMISSION);
    expect(upload.status).toBe('duplicate');
    expect(upload.notice).toContain('already logged');
    expect(calls).toBe(1);
  });

  it('retries retriable failures with backoff then parks in the queue', async () => {
    let calls = 0;
    const queue = new MealUploadQueue(
      fakeClient(async () => {
        calls += 1;
        throw new ApiRequestError('backend down', 502, 'backend_failure', true);
      }),
      { backoffMs: 1, maxRetries: 2 },
    );
    const upload = await queue.submit(SUBMISSION);
    expect(upload.status).toBe('queued');
    expect(calls).toBe(3); // initial try + 2 retries
    expect(queue.hasQueued()).toBe(true);
  });

  it('recovers after transient network loss', async () => {
    let calls = 0;
    const queue = new MealUploadQueue(
      fakeClient(async () => {
        calls += 1;
        if (calls < 3) throw new TypeError('fetch failed'); // offline
        return { meal_id: 'm2' };
      }),
      { backoffMs: 1 },
    );
    const upload = await queue.submit(SUBMISSION);
    expect(upload.status).toBe('done');
    expect(calls).toBe(3);
  });

  it('does not retry non-retriable API errors', async () => {
    let calls = 0;
    const queue = new MealUploadQueue(
      fakeClient(async () => {
        calls += 1;
        throw new ApiRequestError('bad meta', 400, 'malformed', false);
      }),
      { backoffMs: 1 },
    );
    const upload = await queue.submit(SUBMISSION);
    expect(upload.status).toBe('failed');
    expect(calls).toBe(1);
  });

  it('retryQueued re-attempts parked uploads once the service is back', async () => {
    let failing = true;
    const queue = new MealUploadQueue(
      fakeClient(async () => {
        if (failing) throw new ApiRequestError('backend down', 502, 'backend_failure', true);
        return { meal_id: 'm3' };
      }),
      { backoffMs: 1, maxRetries: 1 },
    );
    const upload = await queue.submit(SUBMISSION);
    expect(upload.status).toBe('queued');
    failing = false;
    await queue.retryQueued();
    expect(upload.status).toBe('done');
    expect(queue.hasQueued()).toBe(false);
  });

  it('notifies observers on every state change', async () => {
    const states: string[] = [];
    const queue = new MealUploadQueue(
      fakeClient(async () => ({ meal_id: 'm4' })),
      { backoffMs: 1, onChange: (uploads) => states.push(uploads[uploads.length - 1].status) },
    );
    await queue.submit(SUBMISSION);
    expect(states[0]).toBe('uploading');
    expect(states[states.length - 1]).toBe('done');
  });
});
