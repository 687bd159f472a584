import type { GalleryResponse, SearchRequest } from "../src/types.js";

export function sampleRequest(imageId = "query-000"): SearchRequest {
  return {
    image_id: imageId,
    width: 640,
    height: 640,
    objects: [
      {
        box: [40, 40, 300, 360],
        confidence: 0.93,
        descriptor: { category: "cat_03", instance_id: `${imageId}-obj0` },
      },
      {
        box: [320, 200, 600, 560],
        confidence: 0.81,
        descriptor: { category: "cat_07", instance_id: `${imageId}-obj1` },
      },
    ],
  };
}

export function sampleGallery(imageId = "query-000"): GalleryResponse {
  const objectOne = {
    box: [40, 40, 300, 360] as [number, number, number, number],
    rank: 1,
    rank_score: 0.62,
    broad_class: "class_01",
    warning: null,
    results: [
      {
        product_id: "prod-03-001",
        image_id: "img-03-001",
        score: 0.91,
        category: "cat_03",
        broad_class: "class_01",
        source_object_rank: 1,
      },
      {
        product_id: "prod-03-004",
        image_id: "img-03-004",
        score: 0.84,
        category: "cat_03",
        broad_class: "class_01",
        source_object_rank: 1,
      },
    ],
  };
  const objectTwo = {
    box: [320, 200, 600, 560] as [number, number, number, number],
    rank: 2,
    rank_score: 0.55,
    broad_class: "class_03",
    warning: null,
    results: [
      {
        product_id: "prod-07-002",
        image_id: "img-07-002",
        score: 0.88,
        category: "cat_07",
        broad_class: "class_03",
        source_object_rank: 2,
      },
    ],
  };
  return {
    query_image_id: imageId,
    objects: [objectOne, objectTwo],
    merged: [objectOne.results[0]!, objectTwo.results[0]!, objectOne.results[1]!],
    trace: {
      confidence_filter: { in: 2, out: 2 },
      nms: { in: 2, out: 2 },
      rank: { in: 2, out: 2 },
      retrieve: { in: 3, out: 3 },
      app_filter: { in: 3, out: 3 },
      dedup: { in: 3, out: 3 },
      merge: { in: 3, out: 3 },
    },
  };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
