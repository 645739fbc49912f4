import { describe, expect, it, vi } from "vitest";

import { ServiceClient } from "../src/api.js";

function fetchStub(status: number, body: unknown) {
  return vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  })) as unknown as typeof fetch;
}

describe("ServiceClient", () => {
  it("fetches instance ids from the instances endpoint", async () => {
    const stub = fetchStub(200, { split: "test", ids: ["a", "b"] });
    const client = new ServiceClient("http://svc", stub);
    expect(await client.instanceIds()).toEqual(["a", "b"]);
    expect(stub).toHaveBeenCalledWith("http://svc/api/instances");
  });

  it("posts trace requests with the instance id", async () => {
    const stub = fetchStub(200, { instance_id: "a" });
    const client = new ServiceClient("http://svc", stub);
    await client.trace("a");
    const [url, init] = (stub as any).mock.calls[0];
    expect(url).toBe("http://svc/api/trace");
    expect(JSON.parse(init.body)).toEqual({ id: "a" });
  });

  it("serializes overrides with string concept keys", async () => {
    const stub = fetchStub(200, {});
    const client = new ServiceClient("http://svc", stub);
    await client.intervene("a", { 0: 0.5, 2: 1.0 });
    const [, init] = (stub as any).mock.calls[0];
    expect(JSON.parse(init.body)).toEqual({ id: "a", overrides: { "0": 0.5, "2": 1.0 } });
  });

  it("surfaces the service's error message on non-2xx", async () => {
    const stub = fetchStub(422, { error: "override value 1.5 outside [0, 1]" });
    const client = new ServiceClient("http://svc", stub);
    await expect(client.intervene("a", { 0: 1.5 })).rejects.toThrow(/outside \[0, 1\]/);
  });
});
