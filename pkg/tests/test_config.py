import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensamp.config import (
    KERNEL_KEYS,
    ConfigError,
    KernelConfig,
    ResourceConfig,
    load_kernel_config,
    parse_kernel_config,
    parse_resource_config,
    serialize_kernel_config,
    serialize_resource_config,
)


def test_minimal_resource():
    cfg = parse_resource_config("name=local\nslots=8")
    assert cfg == ResourceConfig("local", 8)
    assert cfg.handle().total_slots == 8


def test_zero_slots_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_resource_config("name=local\nslots=0")
    assert exc.value.key == "slots"
    assert "slots" in str(exc.value)


def test_hpc_extras_accepted():
    cfg = parse_resource_config("name = archer  # comment\nslots = 24\nqueue = normal\naccount=e290\nusername=me\n")
    assert cfg.queue == "normal" and cfg.account == "e290"


@pytest.mark.parametrize(
    "text, key",
    [
        ("slots=4", "name"),
        ("name=x\nslots=four", "slots"),
        ("name=x\nslots=2\ncolour=red", "colour"),
        ("name=x\nslots=2\nwalltime=-3", "walltime"),
    ],
)
def test_resource_errors_name_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_resource_config(text)
    assert exc.value.key == key


def test_resource_round_trip():
    cfg = parse_resource_config("name=bw\nslots=32\nwalltime=3600\nqueue=debug")
    assert parse_resource_config(serialize_resource_config(cfg)) == cfg


def test_minimal_kernel_gets_defaults():
    cfg = parse_kernel_config("workflow = dmdmd\n")
    assert cfg == KernelConfig("dmdmd")
    assert cfg.num_neighbors_for_local_scale == 8
    assert cfg.merge_threshold == 0.2 and cfg.spawn_threshold == 2.0
    assert cfg.bins_per_dim == 10
    assert cfg.effective_stride == cfg.n_steps // 10
    assert cfg.effective_n_new == cfg.num_replicas


def test_every_key_required_or_defaulted():
    for key, (_, default) in KERNEL_KEYS.items():
        field = KernelConfig.__dataclass_fields__[key]
        if key == "workflow":
            assert field.default is dataclasses.MISSING
        else:
            assert field.default == default


def test_coco_projection_bound():
    with pytest.raises(ConfigError, match="2-4") as exc:
        parse_kernel_config("workflow=cocomd\nprojection_dims=5")
    assert exc.value.key == "projection_dims"


@pytest.mark.parametrize(
    "line, key",
    [
        ("num_replicas=1", "num_replicas"),
        ("dt=0", "dt"),
        ("temperature=-1", "temperature"),
        ("friction=0", "friction"),
        ("num_iterations=0", "num_iterations"),
        ("potential=lj", "potential"),
        ("n_steps=ten", "n_steps"),
        ("bogus=1", "bogus"),
        ("dynamic_instances=maybe", "dynamic_instances"),
    ],
)
def test_kernel_errors_name_key(line, key):
    with pytest.raises(ConfigError) as exc:
        parse_kernel_config("workflow=dmdmd\n" + line)
    assert exc.value.key == key


def test_missing_workflow():
    with pytest.raises(ConfigError) as exc:
        parse_kernel_config("num_replicas=4")
    assert exc.value.key == "workflow"


def test_malformed_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_kernel_config("workflow=dmdmd\nthis is not a pair\n")


def test_load_names_file(tmp_path):
    p = tmp_path / "kernel.cfg"
    p.write_text("workflow=dmdmd\nwarp=9\n")
    with pytest.raises(ConfigError) as exc:
        load_kernel_config(p)
    assert "kernel.cfg" in str(exc.value) and "warp" in str(exc.value)


kernel_configs = st.builds(
    KernelConfig,
    workflow=st.sampled_from(["dmdmd", "cocomd"]),
    num_iterations=st.integers(1, 50),
    num_replicas=st.integers(2, 200),
    potential=st.sampled_from(["double_well_1d", "double_well_2d", "mueller_brown"]),
    barrier_height=st.floats(0.1, 50, allow_nan=False),
    n_steps=st.integers(1, 10_000),
    dt=st.floats(1e-6, 1e-1),
    temperature=st.floats(1e-3, 100),
    friction=st.floats(1e-3, 100),
    seed=st.integers(0, 2**31),
    merge_threshold=st.floats(1e-3, 10),
    spawn_threshold=st.floats(1e-3, 10),
    dynamic_instances=st.booleans(),
    projection_dims=st.integers(2, 4),
    bins_per_dim=st.integers(2, 30),
)


@settings(max_examples=80, deadline=None)
@given(kernel_configs)
def test_kernel_round_trip(cfg):
    text = serialize_kernel_config(cfg)
    again = parse_kernel_config(text)
    assert again == cfg
    assert parse_kernel_config(serialize_kernel_config(again)) == again
