"""Reading and writing datasets, fit results and key=value config files.

Dataset CSV: UTF-8, comma separated, header ``c1,c2,delta1,delta2``, deltas
strictly 0/1, lines starting with ``#`` ignored.

Result file: ``key = value`` header lines followed by ``[section]`` blocks of
comma-separated numbers (``eta`` one row per line, ``omega``, ``pi``,
``trace``). All floats use 17 significant digits.
"""

import csv

import numpy as np

from bicens.errors import InvalidArgumentError
from bicens.ggp_optimizer import ActiveSet
from bicens.sieve_model import Dataset, SieveSpec, ThetaVector
from bicens.spline_basis import KnotVector

HEADER = ("c1", "c2", "delta1", "delta2")


class ParseError(InvalidArgumentError):
    """Malformed input file; ``line`` is the 1-based line number."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


def fmt(x):
    return f"{float(x):.17g}"


def _data_lines(fh):
    for lineno, raw in enumerate(fh, start=1):
        text = raw.strip()
        if text and not text.startswith("#"):
            yield lineno, text


def read_dataset(path):
    """Parse a dataset CSV, reporting the line number of the first bad row."""
    c1, c2, d1, d2 = [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = _data_lines(fh)
        try:
            lineno, header = next(rows)
        except StopIteration:
            raise ParseError(0, "file is empty") from None
        if tuple(h.strip() for h in header.split(",")) != HEADER:
            raise ParseError(lineno, f"expected header {','.join(HEADER)}")
        for lineno, text in rows:
            fields = next(csv.reader([text]))
            if len(fields) != 4:
                raise ParseError(lineno, f"expected 4 fields, got {len(fields)}")
            try:
                a, b = float(fields[0]), float(fields[1])
            except ValueError:
                raise ParseError(lineno, f"non-numeric monitoring time in {text!r}") from None
            flags = [f.strip() for f in fields[2:]]
            if any(f not in ("0", "1") for f in flags):
                raise ParseError(lineno, f"deltas must be 0 or 1 in {text!r}")
            if not (np.isfinite(a) and np.isfinite(b)):
                raise ParseError(lineno, "monitoring times must be finite")
            c1.append(a)
            c2.append(b)
            d1.append(int(flags[0]))
            d2.append(int(flags[1]))
    if not c1:
        raise ParseError(0, "no observations")
    return Dataset(c1, c2, d1, d2)


def data_line_numbers(path):
    """File line numbers of the data rows, in dataset order."""
    with open(path, encoding="utf-8", newline="") as fh:
        return [lineno for lineno, _ in _data_lines(fh)][1:]


def write_dataset(data, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for k in range(len(data)):
            w.writerow([fmt(data.c1[k]), fmt(data.c2[k]), int(data.d1[k]), int(data.d2[k])])


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment, keys normalized to ``snake_case``."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ParseError(lineno, f"expected key = value, got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _join(values):
    return ",".join(fmt(v) for v in values)


def write_result(path, spec, result):
    """Write a :class:`~bicens.ggp_optimizer.FitResult` and the knots it used."""
    th = result.theta_hat
    lines = [
        "# bicens sieve fit",
        f"converged = {str(result.converged).lower()}",
        f"stalled = {str(result.stalled).lower()}",
        f"loglik = {fmt(result.loglik)}",
        f"iterations = {result.iterations}",
        f"norm_d = {fmt(result.norm_d)}",
        f"order = {spec.basis1.order}",
        f"domain = {_join(spec.domain)}",
        f"knots1 = {_join(spec.basis1.interior)}",
        f"knots2 = {_join(spec.basis2.interior)}",
        f"p = {spec.p}",
        f"q = {spec.q}",
        f"active = {','.join(str(i) for i in result.active.indices)}",
        f"multipliers = {_join(result.multipliers)}",
        "[eta]",
        *(_join(row) for row in th.eta),
        "[omega]",
        _join(th.omega),
        "[pi]",
        _join(th.pi),
        "[trace]",
        "iteration,loglik,norm_d,n_active",
        *(f"{k},{fmt(f)},{fmt(nd)},{na}" for k, (f, nd, na) in enumerate(result.trace, 1)),
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _floats(text):
    text = text.strip()
    return [float(v) for v in text.split(",")] if text else []


def read_result(path):
    """Parse a result file back into a dict.

    Keys include ``spec`` (:class:`SieveSpec`), ``theta`` (:class:`ThetaVector`),
    ``active`` (:class:`ActiveSet`), ``multipliers``, ``trace`` and the scalar
    header fields.
    """
    header, sections, current = {}, {}, None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            if text.startswith("[") and text.endswith("]"):
                current = text[1:-1]
                sections[current] = []
            elif current is None:
                if "=" not in text:
                    raise ParseError(lineno, f"bad header line {text!r}")
                key, value = (part.strip() for part in text.split("=", 1))
                header[key] = value
            else:
                sections[current].append(text)
    try:
        order = int(header["order"])
        L1, U1, L2, U2 = _floats(header["domain"])
        spec = SieveSpec(
            KnotVector(order, _floats(header["knots1"]), L1, U1),
            KnotVector(order, _floats(header["knots2"]), L2, U2),
        )
        eta = np.array([_floats(row) for row in sections["eta"]])
        theta = ThetaVector(eta, _floats(sections["omega"][0]), _floats(sections["pi"][0]))
        trace = [
            (float(f), float(nd), int(na))
            for _, f, nd, na in (row.split(",") for row in sections.get("trace", [])[1:])
        ]
        active = ActiveSet(spec.dim, tuple(int(i) for i in header["active"].split(",") if i))
    except (KeyError, ValueError, IndexError) as exc:
        raise ParseError(0, f"malformed result file: {exc}") from exc
    return {
        "spec": spec,
        "theta": theta,
        "active": active,
        "multipliers": np.array(_floats(header.get("multipliers", ""))),
        "converged": header.get("converged") == "true",
        "stalled": header.get("stalled") == "true",
        "loglik": float(header["loglik"]),
        "iterations": int(header["iterations"]),
        "norm_d": float(header["norm_d"]),
        "trace": trace,
    }
