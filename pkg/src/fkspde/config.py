"""TOML problem files.

Schema (all sections except [budgets] and the per-command tables are required)::

    [problem]
    name = "example"
    product = "skorohod"        # or "stratonovich"
    horizon = 1.0
    # alpha = 0.2304            # optional override of the variance prefactor

    [domain]
    kind = "box"                # lo = [...], hi = [...]
    lo = [-1.0]
    hi = [1.0]
    # kind = "ball"; center = [...]; radius = r

    [hurst]
    h0 = 0.8
    h_space = [0.8]

    [coefficients.drift]        # constant | affine | trig_x | poly_t | trig_t | tabulated
    kind = "constant"
    value = 0.0

    [coefficients.diffusion]    # constant | poly_t | trig_x | tabulated
    kind = "constant"
    scale = 1.0

    [data]                      # constant | bump | linear
    kind = "constant"
    value = 1.0

    [budgets]                   # defaults for every subcommand, overridable by flags
    paths = 10000
    steps = 100
    seed = 20240607

Subcommand tables ([solve], [moments], [smallball], [crosscheck], [holder],
[density], [compare]) hold the command's own parameters; see the README.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigParseError
from .model import DomainSpec, HurstParams, Product, ProblemSpec, make_coefficients, make_data


@dataclass
class LoadedSpec:
    problem: ProblemSpec
    raw: dict
    path: Optional[str] = None

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def budgets(self) -> dict:
        return dict(self.raw.get("budgets", {}))


def _require(raw: dict, key: str, where: str) -> Any:
    if key not in raw:
        raise ConfigParseError(f"missing key '{key}' in [{where}]")
    return raw[key]


def _domain(raw: dict) -> DomainSpec:
    kind = _require(raw, "kind", "domain")
    if kind in ("box", "hyperrectangle"):
        return DomainSpec.box(_require(raw, "lo", "domain"), _require(raw, "hi", "domain"))
    if kind == "ball":
        return DomainSpec.ball(_require(raw, "center", "domain"), float(_require(raw, "radius", "domain")))
    raise ConfigParseError(f"unknown domain kind {kind!r}")


def spec_from_dict(raw: dict, validate: bool = True) -> ProblemSpec:
    try:
        prob = raw.get("problem", {})
        D = _domain(_require(raw, "domain", "root"))
        hr = _require(raw, "hurst", "root")
        hurst = HurstParams(float(_require(hr, "h0", "hurst")), tuple(_require(hr, "h_space", "hurst")))
        co = raw.get("coefficients", {})
        coeffs = make_coefficients(co.get("drift"), co.get("diffusion"), D.d)
        data = make_data(raw.get("data"), D)
        product = Product(str(prob.get("product", "stratonovich")).lower())
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParseError(f"malformed problem file: {exc}") from exc
    spec = ProblemSpec(
        domain=D,
        coeffs=coeffs,
        hurst=hurst,
        data=data,
        product=product,
        horizon=float(prob.get("horizon", 1.0)),
        alpha_override=prob.get("alpha"),
        name=str(prob.get("name", "problem")),
        source=raw,
    )
    if validate:
        spec.validate()
    return spec


def load_spec(path, validate: bool = True) -> LoadedSpec:
    """Parse and (by default) validate a problem file; bundled names resolve too."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("fkspde") / "data" / (p.name if p.suffix else p.name + ".toml")
        if bundled.is_file():
            text = bundled.read_text()
        else:
            raise ConfigParseError(f"problem file not found: {path}")
    else:
        text = p.read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    return LoadedSpec(spec_from_dict(raw, validate), raw, str(path))


def bundled_specs() -> list[str]:
    return sorted(f.name[:-5] for f in (resources.files("fkspde") / "data").iterdir() if f.name.endswith(".toml"))
