import { describe, expect, it, vi } from "vitest";

import { ApiError, Client } from "../src/api.js";

function fakeFetch(status: number, body: unknown) {
  return vi.fn(async () =>
    new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    }),
  );
}

describe("Client", () => {
  it("posts predict requests with a JSON body", async () => {
    const fetchFn = fakeFetch(200, { doc_id: "d", tactics: [], techniques: [], model_version: "v" });
    const client = new Client("http://svc", fetchFn as unknown as typeof fetch);
    const resp = await client.predict("some report text");
    expect(resp.doc_id).toBe("d");
    const [url, init] = fetchFn.mock.calls[0];
    expect(url).toBe("http://svc/api/predict");
    expect(init?.method).toBe("POST");
    expect(JSON.parse(init?.body as string)).toEqual({ text: "some report text" });
  });

  it("sends feedback payload verbatim", async () => {
    const fetchFn = fakeFetch(201, { doc_id: "f", stored: 3 });
    const client = new Client("", fetchFn as unknown as typeof fetch);
    const payload = { text: "t", tactics: ["TA0001"], techniques: ["T0001", "T0002"] };
    const resp = await client.feedback(payload);
    expect(resp.stored).toBe(3);
    expect(JSON.parse(fetchFn.mock.calls[0][1]?.body as string)).toEqual(payload);
  });

  it("turns error statuses into ApiError with the server detail", async () => {
    const fetchFn = fakeFetch(422, { detail: "unknown labels: ['T9999']" });
    const client = new Client("", fetchFn as unknown as typeof fetch);
    await expect(client.feedback({ text: "t", tactics: [], techniques: ["T9999"] }))
      .rejects.toMatchObject({ status: 422, message: "unknown labels: ['T9999']" });
  });

  it("maps 409 retrain conflicts to ApiError", async () => {
    const fetchFn = fakeFetch(409, { detail: "retrain already running" });
    const client = new Client("", fetchFn as unknown as typeof fetch);
    try {
      await client.retrain();
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(409);
    }
  });

  it("fetches model metadata", async () => {
    const fetchFn = fakeFetch(200, {
      trained_at: "t1", model_version: "t1", taxonomy_version: "x",
      postprocessing: { strategy: "hanging-node", config: {} },
      cv_scores: null, retrain_running: false, last_retrain_error: null,
    });
    const client = new Client("", fetchFn as unknown as typeof fetch);
    const info = await client.model();
    expect(info.postprocessing.strategy).toBe("hanging-node");
    expect(fetchFn.mock.calls[0][0]).toBe("/api/model");
  });
});
