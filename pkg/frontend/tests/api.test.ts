import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { MockService } from "./mock_service.js";

describe("ApiClient", () => {
  let service: MockService;
  const client = new ApiClient();

  beforeEach(() => {
    service = new MockService();
    service.install();
  });

  it("fetches the tagset", async () => {
    const tagset = await client.tagset();
    expect(tagset.tags.map((t) => t.tag)).toEqual(["D", "N", "V", "J", "P"]);
    expect(tagset.categories).toHaveLength(5);
  });

  it("lists pending items sorted by ascending confidence", async () => {
    const { items } = await client.pending();
    const confidences = items.map((i) => i.mean_confidence);
    expect(confidences).toEqual([...confidences].sort((a, b) => a - b));
    expect(items[0]?.id).toBe("00002-ccc"); // mean 0.717, the least confident
  });

  it("submits corrections and receives server state", async () => {
    const updated = await client.submitCorrection("00000-aaa", ["D", "N", "P"]);
    expect(updated.status).toBe("corrected");
    expect(updated.corrected_tags).toEqual(["D", "N", "P"]);
  });

  it("raises ApiError with status and code on 404", async () => {
    await expect(client.item("ghost")).rejects.toMatchObject({
      status: 404,
      code: "unknown_item",
    });
  });

  it("raises ApiError on 409 conflicts", async () => {
    await client.approve("00001-bbb");
    await expect(client.approve("00001-bbb")).rejects.toMatchObject({
      status: 409,
    });
  });

  it("raises ApiError with status 0 on network failure", async () => {
    service.failNextRequest = true;
    const failure = await client.stats().catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.status).toBe(0);
  });
});
