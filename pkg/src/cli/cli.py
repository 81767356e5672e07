"""
Batch front-end for the tangency toolkit.

Every subcommand except ``gen-reference`` runs one JSON scenario::

    {"kind": "renorm", "model": "reference.json", "k_list": [10, 20, 30]}

and writes a run directory with ``results.csv``, ``summary.txt`` and, for
raising scenarios, the output ``model.json``. Paths in a scenario are taken
relative to the scenario file.
"""
from collections import namedtuple
import argparse
import csv
import io
import json
import logging
import math
import os
from pathlib import Path
import sys
import tempfile

import numpy as np
from common import (
    EXIT_CODES,
    BifocusError,
    ContractViolationError,
    DomainError,
    Status,
    notify_run,
    status_of,
)
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from model.model import (
    dump_model,
    global_tangent_jet,
    load_model,
    random_model,
    reference_model,
    reference_spectrum,
    spectrum_from_dict,
    validate_genericity,
)
from raiser.raiser import DEFAULT_K_RANGE, Raiser, make_bag
from renorm.renorm import Renormalizer, RescalingScheme
from tangency.tangency import tangency_index

TEMPLATE_DIR = Path(__file__).parent / "templates"
REQUIRED = object()

CSV_COLUMNS = {
    "validate": [
        "model",
        "det_a34",
        "det_b12",
        "det_d6",
        "det_transverse",
        "passed",
        "index_n",
        "index_m",
    ],
    "raise": ["k", "residual_pre", "residual_post", "index_n", "index_m"],
    "order_n": ["k", "residual_pre", "residual_post", "index_n", "index_m"],
    "renorm": ["k", "sup_error", "aux_norm"],
    "universal": ["k", "fit_error", "total_error"],
}

SCENARIO_DEFAULTS = {
    "validate": {"models": REQUIRED},
    "raise": {"models": REQUIRED, "k_range": list(DEFAULT_K_RANGE)},
    "order_n": {"models": REQUIRED, "N": REQUIRED, "k_range": list(DEFAULT_K_RANGE)},
    "renorm": {
        "model": None,
        "order": 2,
        "scheme": "order_form",
        "k_list": [10, 20, 30, 40, 50, 60],
    },
    "universal": {
        "model": None,
        "target": "henon",
        "target_params": {},
        "n": 2,
        "k": 40,
    },
}
COMMON_DEFAULTS = {"spectrum": None, "out": None}

SUBCOMMANDS = {
    "validate": "validate",
    "raise": "raise",
    "order-n": "order_n",
    "renorm": "renorm",
    "universal": "universal",
}

Scenario = namedtuple("Scenario", ["kind", "path", "base_dir", "knobs"])
RunOutcome = namedtuple("RunOutcome", ["message", "rows", "sections", "model"])


def henon_target(a: float = 1.4, b: float = 0.3):
    def target(y1, y2):
        return 1.0 - a * y1**2 + y2, b * y1

    return target


def random_polynomial_target(seed: int = 0, degree: int = 4, scale: float = 1.0):
    """Pair of polynomials of the given degree with normal coefficients."""
    c = scale * np.random.default_rng(seed).normal(size=(2, degree + 1, degree + 1))

    def target(y1, y2):
        return tuple(
            sum(
                c[row, i, j] * y1**i * y2**j
                for i in range(degree + 1)
                for j in range(degree + 1 - i)
            )
            for row in range(2)
        )

    return target


TARGETS = {"henon": henon_target, "random_polynomial": random_polynomial_target}

SCHEMES = {
    "order_form": RescalingScheme.order_form,
    "full_polynomial_form": RescalingScheme.full_polynomial_form,
}


def gen_reference(seed: int, count: int, n: int, couplings: bool = False) -> list:
    """Serialized generic models at tangencies of index (n, 0), reproducible by seed."""
    if count < 1:
        raise DomainError(f"gen_reference - count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    return [dump_model(random_model(rng, n, couplings=couplings)) for _ in range(count)]


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(
        mode="w", dir=path.parent, prefix=f".{path.name}.", delete=False, newline=""
    ) as tmp_file:
        tmp_file.write(text)
    os.replace(tmp_file.name, path)


def csv_text(columns, rows) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns)
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def summary_environment() -> Environment:
    return Environment(
        loader=FileSystemLoader(str(TEMPLATE_DIR)),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise ContractViolationError(f"run_scenario - cannot read config {path}: {e}") from e
    if not isinstance(data, dict) or "kind" not in data:
        raise ContractViolationError("run_scenario - config needs a top-level 'kind'")

    kind = data.pop("kind")
    if kind not in SCENARIO_DEFAULTS:
        raise ContractViolationError(
            f"run_scenario - unknown kind '{kind}', expected one of {sorted(SCENARIO_DEFAULTS)}"
        )
    knobs = {**COMMON_DEFAULTS, **SCENARIO_DEFAULTS[kind]}
    unknown = set(data) - set(knobs)
    if unknown:
        raise ContractViolationError(f"run_scenario - unknown keys {sorted(unknown)} for '{kind}'")
    knobs.update(data)
    missing = sorted(key for key, value in knobs.items() if value is REQUIRED)
    if missing:
        raise ContractViolationError(f"run_scenario - missing keys {missing} for '{kind}'")
    return Scenario(kind, path, path.parent, knobs)


def _integer(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ContractViolationError(f"run_scenario - '{name}' must be an integer, got {value!r}")
    if value < minimum:
        raise DomainError(f"run_scenario - '{name}' must be >= {minimum}, got {value}")
    return value


def _k_range(value) -> tuple:
    if not isinstance(value, list) or len(value) != 2:
        raise ContractViolationError(f"run_scenario - 'k_range' must be [k_min, k_max], got {value!r}")
    k_min, k_max = (_integer(k, "k_range") for k in value)
    if k_min > k_max:
        raise DomainError(f"run_scenario - empty k_range {value}")
    return k_min, k_max


def _format(value: float) -> str:
    return f"{value:.6e}"


def unexpected_status(e: Exception) -> Status:
    """Non-library errors: bad input values are contract violations, the rest numeric."""
    if isinstance(e, (TypeError, ValueError, KeyError)):
        return Status.CONTRACT_VIOLATION
    return Status.NUMERIC_FAILURE


class Runner:
    """Runs scenarios and writes their run directories"""

    def __init__(self) -> None:
        self.logger = logging.getLogger(self.__class__.__name__)
        self.logger.setLevel(os.environ.get("LOGGING", logging.DEBUG))
        self.raiser = Raiser()
        self.renormalizer = Renormalizer()
        self.jinja_env = summary_environment()

    def _resolve(self, scenario: Scenario, ref) -> Path:
        if not isinstance(ref, str):
            raise ContractViolationError(f"run_scenario - expected a path, got {ref!r}")
        return scenario.base_dir / ref

    def _read_model(self, path: Path):
        try:
            return load_model(path.read_text())
        except (OSError, ValueError, TypeError) as e:
            raise ContractViolationError(f"run_scenario - cannot load model {path}: {e}") from e

    def _models(self, scenario: Scenario) -> list:
        refs = scenario.knobs["models"]
        if isinstance(refs, str):
            directory = self._resolve(scenario, refs)
            if not directory.is_dir():
                raise ContractViolationError(f"run_scenario - {directory} is not a directory")
            paths = sorted(directory.glob("*.json"))
        elif isinstance(refs, list):
            paths = [self._resolve(scenario, ref) for ref in refs]
        else:
            raise ContractViolationError("run_scenario - 'models' must be a directory or a list of paths")
        self.logger.debug(f"Loading {len(paths)} models")
        return [(path.name, self._read_model(path)) for path in paths]

    def _model(self, scenario: Scenario, order: int):
        ref = scenario.knobs["model"]
        if ref is None:
            return reference_model(order)
        return self._read_model(self._resolve(scenario, ref))

    def _spectrum(self, scenario: Scenario):
        data = scenario.knobs["spectrum"]
        if data is None:
            return reference_spectrum()
        if not isinstance(data, dict):
            raise ContractViolationError("run_scenario - 'spectrum' must be an object")
        try:
            return spectrum_from_dict(data)
        except TypeError as e:
            raise ContractViolationError(f"run_scenario - bad spectrum: {e}") from e

    def _run_dir(self, scenario: Scenario) -> Path:
        out = scenario.knobs["out"]
        if out is None:
            out = f"run-{scenario.kind}"
        return self._resolve(scenario, out)

    def _write_run(self, scenario: Scenario, outcome: RunOutcome) -> Path:
        run_dir = self._run_dir(scenario)
        write_atomic(run_dir / "results.csv", csv_text(CSV_COLUMNS[scenario.kind], outcome.rows))
        if outcome.model is not None:
            write_atomic(run_dir / "model.json", dump_model(outcome.model))
        summary = self.jinja_env.get_template("summary.txt.j2").render(
            kind=scenario.kind,
            config=scenario.path.name,
            message=outcome.message,
            columns=CSV_COLUMNS[scenario.kind],
            row_count=len(outcome.rows),
            sections=outcome.sections,
        )
        write_atomic(run_dir / "summary.txt", summary)
        self.logger.info(f"Wrote run directory {run_dir}")
        return run_dir

    @notify_run
    def _cmd_validate(self, scenario: Scenario) -> RunOutcome:
        rows, sections, failed = [], [], []
        for name, gm in self._models(scenario):
            report = validate_genericity(gm)
            index = tangency_index(global_tangent_jet(gm)) if report.passed else None
            rows.append(
                dict(
                    model=name,
                    det_a34=report.det_a34,
                    det_b12=report.det_b12,
                    det_d6=report.det_d6,
                    det_transverse=report.det_transverse,
                    passed=report.passed,
                    index_n=index.n if index else None,
                    index_m=index.m if index else None,
                )
            )
            sections.append(
                dict(
                    title=name,
                    facts=[
                        ("det_a34", _format(report.det_a34)),
                        ("det_b12", _format(report.det_b12)),
                        ("det_d6", _format(report.det_d6)),
                        ("transversality", _format(report.det_transverse)),
                        ("index", str(index) if index else "-"),
                        ("failures", ", ".join(report.failures) or "none"),
                    ],
                )
            )
            if not report.passed:
                failed.append(f"{name} ({', '.join(report.failures)})")
        outcome = RunOutcome(f"{len(rows)} models checked", rows, sections, None)
        if failed:
            self._write_run(scenario, outcome._replace(message=f"genericity failed: {'; '.join(failed)}"))
            raise ContractViolationError(f"validate_genericity - failed for {'; '.join(failed)}")
        return outcome

    @notify_run
    def _cmd_raise(self, scenario: Scenario) -> RunOutcome:
        models = self._models(scenario)
        if len(models) != 2:
            raise ContractViolationError(f"raise_suborder - expected 2 models, got {len(models)}")
        journal = []
        (_, gm1), (_, gm2) = models
        model, index = self.raiser.raise_suborder(
            gm1, gm2, self._spectrum(scenario), _k_range(scenario.knobs["k_range"]), journal
        )
        record = journal[-1]
        sections = [
            dict(
                title="raised",
                facts=[
                    ("k", str(record.k)),
                    ("index", str(index)),
                    ("residual_pre", _format(record.residual_pre)),
                    ("residual_post", _format(record.residual_post)),
                ],
            )
        ]
        rows = [entry._asdict() for entry in journal]
        return RunOutcome(f"raised to index {index} at k={record.k}", rows, sections, model)

    @notify_run
    def _cmd_order_n(self, scenario: Scenario) -> RunOutcome:
        N = _integer(scenario.knobs["N"], "N")
        spec = self._spectrum(scenario)
        bag = make_bag([gm for _, gm in self._models(scenario)], spec)
        journal = []
        model, index = self.raiser.build_order_N(bag, N, _k_range(scenario.knobs["k_range"]), journal)
        sections = [
            dict(
                title="order",
                facts=[
                    ("N", str(N)),
                    ("inputs", str(len(bag.items))),
                    ("index", str(index)),
                    ("raising steps", str(len(journal))),
                ],
            )
        ]
        rows = [entry._asdict() for entry in journal]
        return RunOutcome(f"built index {index} from {len(bag.items)} tangencies", rows, sections, model)

    @notify_run
    def _cmd_renorm(self, scenario: Scenario) -> RunOutcome:
        knobs = scenario.knobs
        if knobs["scheme"] not in SCHEMES:
            raise ContractViolationError(
                f"convergence_report - unknown scheme '{knobs['scheme']}', expected one of {sorted(SCHEMES)}"
            )
        gm = self._model(scenario, _integer(knobs["order"], "order"))
        scheme = SCHEMES[knobs["scheme"]](gm.order_cap)
        if not isinstance(knobs["k_list"], list):
            raise ContractViolationError("convergence_report - 'k_list' must be a list of integers")
        k_list = [_integer(k, "k_list") for k in knobs["k_list"]]
        rows = self.renormalizer.convergence_report(gm, self._spectrum(scenario), scheme, k_list)
        sections = [
            dict(
                title=f"{scheme.variant.name.lower()} n={scheme.n}",
                facts=[(f"k={row.k}", f"{_format(row.sup_error)}  aux {_format(row.aux_norm)}") for row in rows],
            )
        ]
        drop = rows[0].sup_error / rows[-1].sup_error if rows[-1].sup_error > 0 else math.inf
        return RunOutcome(
            f"sup error dropped by {drop:.3g} over k={k_list[0]}..{k_list[-1]}",
            [row._asdict() for row in rows],
            sections,
            None,
        )

    @notify_run
    def _cmd_universal(self, scenario: Scenario) -> RunOutcome:
        knobs = scenario.knobs
        if knobs["target"] not in TARGETS:
            raise ContractViolationError(
                f"universal_approx - unknown target '{knobs['target']}', expected one of {sorted(TARGETS)}"
            )
        if not isinstance(knobs["target_params"], dict):
            raise ContractViolationError("universal_approx - 'target_params' must be an object")
        try:
            target = TARGETS[knobs["target"]](**knobs["target_params"])
        except TypeError as e:
            raise ContractViolationError(f"universal_approx - bad target_params: {e}") from e
        n = _integer(knobs["n"], "n")
        gm = self._model(scenario, n)
        spec = self._spectrum(scenario)
        k_values = knobs["k"] if isinstance(knobs["k"], list) else [knobs["k"]]

        fits = [
            self.renormalizer.universal_approx(target, n, gm, spec, _integer(k, "k"))
            for k in k_values
        ]
        rows = [dict(k=fit.k, fit_error=fit.fit_error, total_error=fit.total_error) for fit in fits]
        best = min(fits, key=lambda fit: fit.total_error)
        sections = [
            dict(
                title=f"{knobs['target']} n={n}",
                facts=[(f"k={fit.k}", f"fit {_format(fit.fit_error)}  total {_format(fit.total_error)}") for fit in fits],
            )
        ]
        return RunOutcome(f"best total error {_format(best.total_error)} at k={best.k}", rows, sections, None)

    def run_scenario(self, path, kind: str = None) -> dict:
        try:
            self.logger.info(f"{self.__class__.__name__} - called with {path}")
            scenario = load_scenario(path)
            if kind is not None and scenario.kind != kind:
                raise ContractViolationError(
                    f"run_scenario - config kind '{scenario.kind}' does not match '{kind}'"
                )
            outcome = getattr(self, f"_cmd_{scenario.kind}")(scenario)
            self._write_run(scenario, outcome)
            status, message = Status.SUCCESS, outcome.message
        except BifocusError as e:
            self.logger.exception(e)
            status, message = status_of(e), str(e)
        except Exception as e:
            self.logger.exception(e)
            status, message = unexpected_status(e), f"run_scenario - {e.__class__.__name__}: {e}"
        return dict(status=status.name, exit_code=EXIT_CODES[status], message=message)

    def run_generate(self, seed: int, count: int, n: int, out, couplings: bool = False) -> dict:
        try:
            self.logger.info(f"{self.__class__.__name__} - generating {count} models of order {n}")
            texts = gen_reference(seed, count, n, couplings)
            width = max(3, len(str(count - 1)))
            for i, text in enumerate(texts):
                write_atomic(Path(out) / f"model-{i:0{width}d}.json", text)
            status, message = Status.SUCCESS, f"wrote {count} models of index ({n}, 0) to {out}"
        except BifocusError as e:
            self.logger.exception(e)
            status, message = status_of(e), str(e)
        except Exception as e:
            self.logger.exception(e)
            status, message = unexpected_status(e), f"run_generate - {e.__class__.__name__}: {e}"
        return dict(status=status.name, exit_code=EXIT_CODES[status], message=message)


def cmd_scenario(runner: Runner, args) -> dict:
    return runner.run_scenario(args.config, args.kind)


def cmd_gen_reference(runner: Runner, args) -> dict:
    return runner.run_generate(args.seed, args.count, args.order, args.out, args.couplings)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bifocus", description="Corank-2 homoclinic tangency experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, kind in SUBCOMMANDS.items():
        ps = sub.add_parser(command, help=f"Run a '{kind}' scenario")
        ps.add_argument("config", type=str)
        ps.set_defaults(func=cmd_scenario, kind=kind)

    pg = sub.add_parser("gen-reference", help="Generate index-(n, 0) reference models")
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--count", type=int, default=8)
    pg.add_argument("--order", type=int, default=1)
    pg.add_argument("--out", type=str, required=True)
    pg.add_argument("--couplings", action="store_true")
    pg.set_defaults(func=cmd_gen_reference)

    args = parser.parse_args(argv)
    result = args.func(Runner(), args)
    print(f"{result['status']}: {result['message']}")
    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
