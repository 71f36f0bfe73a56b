import { afterEach, describe, expect, it, vi } from 'vitest';

import { ApiError, fetchFlag, fetchFlags, fetchStats, postDecision } from '../src/api.js';

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe('fetchFlags', () => {
  it('requests the status filter as a query parameter', async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ flags: [], stats: null }));
    vi.stubGlobal('fetch', fetchMock);
    await fetchFlags('pending');
    expect(fetchMock).toHaveBeenCalledWith('/api/flags?status=pending', expect.anything());
  });

  it('throws ApiError with the status code on failure', async () => {
    vi.stubGlobal('fetch', vi.fn(async () => new Response('boom', { status: 500 })));
    await expect(fetchFlags()).rejects.toThrowError(ApiError);
    await expect(fetchFlags()).rejects.toMatchObject({ status: 500 });
  });
});

describe('fetchFlag', () => {
  it('hits the flag detail endpoint', async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ flag_id: 'flag1' }));
    vi.stubGlobal('fetch', fetchMock);
    await fetchFlag('flag1');
    expect(fetchMock).toHaveBeenCalledWith('/api/flags/flag1', expect.anything());
  });
});

describe('postDecision', () => {
  it('posts exactly the decision payload the server validates', async () => {
    const fetchMock = vi.fn().mockResolvedValue(
      jsonResponse({ ok: true, flag_id: 'flag1', stats: { pending: 0, kept: 0, modified: 1, removed: 0 } }),
    );
    vi.stubGlobal('fetch', fetchMock);
    await postDecision('flag1', {
      action: 'modify',
      reviewer: 'rev',
      new_question: 'How do Amazon recognize lease cost?',
    });
    const [url, init] = fetchMock.mock.calls[0]!;
    expect(url).toBe('/api/flags/flag1/decision');
    expect(init.method).toBe('POST');
    expect(JSON.parse(init.body as string)).toEqual({
      action: 'modify',
      reviewer: 'rev',
      new_question: 'How do Amazon recognize lease cost?',
    });
  });

  it('surfaces validation failures as ApiError', async () => {
    vi.stubGlobal('fetch', vi.fn().mockResolvedValue(new Response('must change', { status: 422 })));
    await expect(
      postDecision('flag1', { action: 'keep', reviewer: 'rev' }),
    ).rejects.toMatchObject({ status: 422 });
  });
});

describe('fetchStats', () => {
  it('parses the four counters', async () => {
    vi.stubGlobal('fetch', vi.fn().mockResolvedValue(
      jsonResponse({ pending: 3, kept: 1, modified: 0, removed: 0 }),
    ));
    const stats = await fetchStats();
    expect(stats.pending).toBe(3);
    expect(stats.kept).toBe(1);
  });
});
