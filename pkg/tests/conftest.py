import pytest

from segclean.model import Store, StoreConfig


def toy_config(segments=16, fill=0.5, trigger=1, batch=2, buffer_segments=2,
               segment_size=2 * 2**20):
    return StoreConfig(
        capacity=segments * segment_size,
        segment_size=segment_size,
        fill_factor=fill,
        gc_trigger_free=trigger,
        gc_batch=batch,
        sort_buffer_segments=buffer_segments,
    )


@pytest.fixture
def loaded_store():
    store = Store(toy_config())
    store.load_sequential()
    return store
