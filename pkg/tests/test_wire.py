"""Wire-format tests: catalog rows, query documents, and gallery serialization."""

import numpy as np
import pytest

from vsx.encode import SyntheticEncoder, SyntheticWorld
from vsx.wire import WireFormatError, catalog_row_to_item, gallery_to_json, query_from_json


def base_query(box):
    return {
        "image_id": "q", "width": 100, "height": 80,
        "objects": [{"box": box, "confidence": 0.9,
                     "descriptor": {"category": "c", "instance_id": "i"}}],
    }


class TestQueryFromJson:
    def test_boxes_clamped_to_image_bounds(self):
        query = query_from_json(base_query([-10, -5, 120, 200]))
        box = query.objects[0].detection.box
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0.0, 0.0, 100.0, 80.0)

    def test_fully_outside_box_rejected(self):
        with pytest.raises(WireFormatError, match="box"):
            query_from_json(base_query([200, 200, 300, 300]))

    def test_embedding_mode(self):
        query = query_from_json({
            "image_id": "q", "width": 10, "height": 10,
            "objects": [{"box": [0, 0, 5, 5], "confidence": 0.5,
                         "embedding": [1.0, 0.0, 0.0, 0.0]}],
        })
        assert query.objects[0].embedding is not None
        assert query.objects[0].descriptor is None

    def test_object_without_embedding_or_descriptor_rejected(self):
        with pytest.raises(WireFormatError, match="embedding or a descriptor"):
            query_from_json({
                "image_id": "q", "width": 10, "height": 10,
                "objects": [{"box": [0, 0, 5, 5], "confidence": 0.5}],
            })


class TestCatalogRow:
    def test_encodes_when_vector_missing(self):
        world = SyntheticWorld(2, 0.0, seed=0, dimension=8, categories=["a", "b"])
        item = catalog_row_to_item(
            {"product_id": "p", "image_id": "img", "category": "a",
             "tags": {"geo": ["US"]}},
            encoder=SyntheticEncoder(world),
        )
        assert item.vector.shape == (8,)
        assert float(np.linalg.norm(item.vector)) == pytest.approx(1.0, abs=1e-5)

    def test_vectorless_row_without_encoder_rejected(self):
        with pytest.raises(WireFormatError, match="no encoder"):
            catalog_row_to_item({"product_id": "p", "image_id": "img",
                                 "category": "a", "tags": {"geo": ["US"]}})

    def test_missing_tags_geo_rejected(self):
        with pytest.raises(WireFormatError, match="tags.geo"):
            catalog_row_to_item({"product_id": "p", "image_id": "img",
                                 "category": "a", "tags": {}, "vector": [1, 0]})
