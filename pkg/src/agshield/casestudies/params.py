"""Flat `key = value` model parameter files.

Integers, reals, and comma-separated tables; `#` starts a comment. Every
PlatoonParams/PlantParams field is addressable (the plant's ten cost
tables through cost_table_1 .. cost_table_10). Unknown keys are errors.
"""

from dataclasses import replace

from .platoon import PlatoonParams
from .plant import PlantParams


def parse_kv_text(text):
    out = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected `key = value`, got `{raw}`")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key `{key}`")
        out[key] = value.strip()
    return out


def parse_kv_file(path):
    with open(path, "r", encoding="ascii") as fh:
        return parse_kv_text(fh.read())


def _to_bool(v):
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"bad boolean `{v}`")


def _to_tuple(v, conv):
    return tuple(conv(x.strip()) for x in v.split(","))


_PLATOON_CONV = {
    "n_cars": int, "v_min": int, "v_max": int, "d_max": int,
    "episode_len": int, "init_gap": int, "init_speed": int,
    "period": float,
    "accelerations": lambda v: _to_tuple(v, int),
}

_PLANT_CONV = {
    "capacity": float, "flow_rate_min": float, "flow_rate_max": float,
    "period": float, "init_volume": float,
    "episode_len": int, "init_phase": int,
    "demand_a": lambda v: _to_tuple(v, float),
    "demand_b": lambda v: _to_tuple(v, float),
    "action_alias": _to_bool,
}


def _apply(base, kv, conv_map, extra=None):
    updates = {}
    extra = extra or {}
    for key, value in kv.items():
        if key in conv_map:
            try:
                updates[key] = conv_map[key](value)
            except ValueError as exc:
                raise ValueError(f"key `{key}`: {exc}") from None
        elif key in extra:
            extra[key](value, updates)
        else:
            raise ValueError(f"unknown parameter key `{key}`")
    return replace(base, **updates)


def platoon_params(kv=None, **overrides):
    base = PlatoonParams()
    if kv:
        base = _apply(base, kv, _PLATOON_CONV)
    return replace(base, **overrides) if overrides else base


def plant_params(kv=None, **overrides):
    base = PlantParams()
    if kv:
        cost_rows = {}

        def cost_setter(unit):
            def setter(value, updates):
                cost_rows[unit] = _to_tuple(value, float)
                tables = list(updates.get("cost_tables", base.cost_tables))
                tables[unit] = cost_rows[unit]
                updates["cost_tables"] = tuple(tables)
            return setter

        extra = {f"cost_table_{u + 1}": cost_setter(u) for u in range(10)}
        base = _apply(base, kv, _PLANT_CONV, extra)
    return replace(base, **overrides) if overrides else base
