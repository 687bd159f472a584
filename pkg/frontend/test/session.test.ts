import { describe, expect, it } from "vitest";

import { Session, followUpRequest } from "../src/session.js";
import { sampleGallery, sampleRequest } from "./fixtures.js";

describe("Session", () => {
  it("shows the merged gallery until an object is selected", () => {
    const session = new Session();
    session.pushQuery(sampleRequest(), sampleGallery());
    expect(session.visibleResults().map((r) => r.product_id)).toEqual([
      "prod-03-001",
      "prod-07-002",
      "prod-03-004",
    ]);
  });

  it("object selection filters the gallery to that object's ranked list", () => {
    const session = new Session();
    session.pushQuery(sampleRequest(), sampleGallery());
    session.selectObject(2);
    expect(session.visibleResults().map((r) => r.product_id)).toEqual(["prod-07-002"]);
    session.selectObject(1);
    expect(session.visibleResults().map((r) => r.product_id)).toEqual([
      "prod-03-001",
      "prod-03-004",
    ]);
  });

  it("rejects selecting an object that was not detected", () => {
    const session = new Session();
    session.pushQuery(sampleRequest(), sampleGallery());
    expect(() => session.selectObject(9)).toThrow(/no detected object/);
  });

  it("back restores the prior entry with its selection, without any fetch", () => {
    const session = new Session();
    session.pushQuery(sampleRequest("query-000"), sampleGallery("query-000"));
    session.selectObject(2);
    session.pushQuery(sampleRequest("query-001"), sampleGallery("query-001"));
    expect(session.current?.gallery.query_image_id).toBe("query-001");

    const restored = session.back();
    expect(restored?.gallery.query_image_id).toBe("query-000");
    expect(restored?.selectedObjectRank).toBe(2);
    expect(session.canGoForward).toBe(true);
    expect(session.forward()?.gallery.query_image_id).toBe("query-001");
  });

  it("a new query truncates the forward branch", () => {
    const session = new Session();
    session.pushQuery(sampleRequest("a"), sampleGallery("a"));
    session.pushQuery(sampleRequest("b"), sampleGallery("b"));
    session.back();
    session.pushQuery(sampleRequest("c"), sampleGallery("c"));
    expect(session.canGoForward).toBe(false);
    expect(session.length).toBe(2);
  });

  it("judge overlay toggles per entry", () => {
    const session = new Session();
    session.pushQuery(sampleRequest(), sampleGallery());
    session.toggleJudgeOverlay("run-1");
    expect(session.current?.judgeRunId).toBe("run-1");
    session.toggleJudgeOverlay("run-1");
    expect(session.current?.judgeRunId).toBeNull();
  });
});

describe("followUpRequest", () => {
  it("clicking a result issues a new search with that product image as query", () => {
    const item = sampleGallery().merged[1]!;
    const request = followUpRequest(item);
    expect(request.image_id).toBe("followup-img-07-002");
    expect(request.objects).toHaveLength(1);
    expect(request.objects[0]!.descriptor).toEqual({
      category: "cat_07",
      instance_id: "img-07-002",
    });
    expect(request.objects[0]!.box).toEqual([0, 0, 640, 640]);
  });
});
