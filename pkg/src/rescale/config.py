"""Flat ``key = value`` configuration files."""
from dataclasses import dataclass, field
import math

from .engine import FIGURE1_CHECKPOINTS, RunConfig
from .errors import ConfigError, InvalidInputError


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(v)
    return int(f)


def _float(v):
    f = float(v)
    if math.isnan(f):
        raise ValueError(v)
    return f


def _K(v):
    return None if v.strip() == "auto" else _float(v)


def _floats(v):
    return tuple(_float(p) for p in v.replace(",", " ").split())


def _str(v):
    return v.strip()


def _events(v):
    v = v.strip()
    if v in ("none", "off"):
        return 0
    if v == "all":
        return 2 ** 62
    n = _int(v)
    if n < 0:
        raise ValueError(v)
    return n


# key -> (parser, default); None default means "derived"
KEYS = {
    "torus.dim": (_int, 1),
    "field.pi": (_str, "trimodal"),
    "field.A": (_str, "zero"),
    "kappa.mode": (_str, "from_pi"),
    "kappa.field": (_str, ""),
    "kappa.K": (_K, None),
    "kappa.target_lower": (_float, 0.02),
    "kappa.grid_n": (_int, 0),
    "weights.k": (_float, 0.0),
    "weights.r": (_float, 1000.0),
    "mu0.kind": (_str, "uniform"),
    "sde.dt": (_float, 0.05),
    "sde.method": (_str, "clock"),
    "seed.diffusion": (_int, 1),
    "seed.killing": (_int, 2),
    "seed.rebirth": (_int, 3),
    "run.T_end": (_float, 1e6),
    "run.checkpoints": (_floats, None),
    "histogram.bins": (_int, 50),
    "histogram.mode": (_str, "path_only"),
    "dw.n_terms": (_int, 12),
    "oracle.n": (_int, 0),
    "oracle.tol": (_float, 1e-12),
    "oracle.dt_flow": (_float, 0.01),
    "oracle.T": (_float, 512.0),
    "apt.T": (_float, 1.0),
    "apt.base_times": (_floats, (2.0, 4.0, 6.0, 8.0)),
    "apt.n_s": (_int, 9),
    "output.events": (_events, 10_000),
}


@dataclass
class Config:
    """Parsed configuration: the sampler run plus oracle and APT settings."""

    run: RunConfig
    values: dict
    oracle_tol: float = 1e-12
    oracle_dt_flow: float = 0.01
    oracle_T: float = 512.0
    apt_T: float = 1.0
    apt_base_times: tuple = (2.0, 4.0, 6.0, 8.0)
    apt_n_s: int = 9
    lines: dict = field(default_factory=dict)

    def resolved_text(self):
        """All applied values, one per line; floats use ``repr`` so they round-trip."""
        out = ["# resolved configuration"]
        for key in KEYS:
            out.append(f"{key} = {_format(key, self.values[key])}")
        return "\n".join(out) + "\n"


def _format(key, v):
    if key == "kappa.K" and v is None:
        return "auto"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    if key == "output.events" and v >= 2 ** 62:
        return "all"
    return str(v)


def parse_config(text, overrides=None):
    """
    Parse ``key = value`` lines (``#`` starts a comment) into a :class:`Config`.

    ``overrides`` maps keys to raw string values applied after the file (used
    by ``--seed``).

    Raises
    ------
    ConfigError
        Unknown key, duplicate key, malformed value or violated invariant;
        the message names the key and line.
    """
    raw, lines = {}, {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=no)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown key", key=key, line=no)
        if key in raw:
            raise ConfigError("duplicate key", key=key, line=no)
        raw[key], lines[key] = value, no
    for key, value in (overrides or {}).items():
        raw[key] = value
        lines.setdefault(key, None)
    values = {}
    for key, (parse, default) in KEYS.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except (ValueError, TypeError):
                raise ConfigError(f"cannot parse {raw[key]!r}", key=key, line=lines.get(key)) from None
        else:
            values[key] = default
    if values["kappa.K"] is None and "kappa.K" not in raw:
        values["kappa.K"] = 1.75 if values["kappa.mode"] == "from_pi" else 0.0
    if values["run.checkpoints"] is None:
        values["run.checkpoints"] = tuple(c for c in FIGURE1_CHECKPOINTS if c <= values["run.T_end"])

    def where(key):
        return lines.get(key)

    for key in ("oracle.tol", "oracle.dt_flow"):
        if not values[key] > 0:
            raise ConfigError("must be positive", key=key, line=where(key))
    if values["apt.n_s"] < 9:
        raise ConfigError("need at least 9 s-samples", key="apt.n_s", line=where("apt.n_s"))
    if not (values["weights.k"] >= 0 and math.isfinite(values["weights.k"])):
        raise ConfigError("weights.k must be >= 0", key="weights.k", line=where("weights.k"))
    if not (values["weights.r"] > 0 and math.isfinite(values["weights.r"])):
        raise ConfigError("weights.r must be > 0", key="weights.r", line=where("weights.r"))
    if values["apt.T"] < 0:
        raise ConfigError("must be >= 0", key="apt.T", line=where("apt.T"))
    try:
        run = RunConfig(
            dim=values["torus.dim"], pi=values["field.pi"], A=values["field.A"],
            kappa_mode=values["kappa.mode"], kappa_field=values["kappa.field"],
            K=values["kappa.K"], target_lower=values["kappa.target_lower"],
            kappa_grid_n=values["kappa.grid_n"], k=values["weights.k"], r=values["weights.r"],
            mu0=values["mu0.kind"], dt=values["sde.dt"], method=values["sde.method"],
            seeds=(values["seed.diffusion"], values["seed.killing"], values["seed.rebirth"]),
            T_end=values["run.T_end"], checkpoints=values["run.checkpoints"],
            bins=values["histogram.bins"], hist_mode=values["histogram.mode"],
            n_terms=values["dw.n_terms"], oracle_n=values["oracle.n"], events=values["output.events"])
    except ConfigError as exc:
        key = exc.key
        if key in KEYS or key is None:
            raise ConfigError(exc.reason, key=key, line=where(key)) from None
        # grouped keys such as "weights" or "seed"
        hits = [k for k in KEYS if k.startswith(key + ".")]
        raise ConfigError(exc.reason, key=hits[0] if len(hits) == 1 else key,
                          line=min((where(k) for k in hits if where(k)), default=None)) from None
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    if values["kappa.grid_n"] and values["kappa.grid_n"] < 64:
        raise ConfigError("grid_n must be >= 64", key="kappa.grid_n", line=where("kappa.grid_n"))
    return Config(run, values, values["oracle.tol"], values["oracle.dt_flow"], values["oracle.T"],
                  values["apt.T"], values["apt.base_times"], values["apt.n_s"], lines)


def load_config(path=None, overrides=None):
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, overrides)
