"""Pipeline operations behind the service endpoints.

Every operation takes plain request data, runs the corresponding core
functions, writes its artifacts (each embedding the resolved config and
seed, never a timestamp) and returns a JSON-serializable summary.  Two
runs with the same request are byte-identical on disk.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import evalkit, filtertrain, imgio, matcher, patches
from ..encoder import encode
from ..errors import ConfigError, DataError

__all__ = [
    "extract_patches_op",
    "train_op",
    "train_grid_op",
    "encode_op",
    "compare_op",
    "eval_op",
    "compare_methods_op",
]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {p}: {exc}") from exc


def _ensure_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# Patch extraction


def _regions_for_image(regions_dir: Path, image_path: str) -> list[Path]:
    stem = Path(image_path).stem
    hits = [
        p
        for p in regions_dir.iterdir()
        if p.is_file() and (p.name == f"{stem}.pgm" or p.name.startswith(f"{stem}."))
    ]
    return sorted(hits)


def extract_patches_op(req) -> dict:
    manifest = imgio.load_manifest(req.manifest)
    regions_dir = Path(req.regions_dir)
    if not regions_dir.is_dir():
        raise ConfigError(f"regions directory not found: {regions_dir}")
    sizes = list(req.sizes) if req.sizes else list(filtertrain.GRID_FILTER_SIDES)

    entries = []
    for rec in manifest.records:
        region_files = _regions_for_image(regions_dir, rec.image)
        if not region_files:
            continue
        image = imgio.load_normalized_iris(rec.image, rec.mask, id=rec.iris_id,
                                           strict=req.strict_dims)
        for rf in region_files:
            entries.append((image, patches.RegionMask(grid=imgio.load_mask(rf),
                                                      source_id=rf.name)))
    if not entries:
        raise ConfigError(
            f"no region masks in {regions_dir} match any manifest image "
            "(expected '<image-stem>.pgm' or '<image-stem>.<tag>.pgm')"
        )

    corpora, report = patches.build_corpus(
        entries, sizes, req.per_region_count, req.seed, req.source_tag
    )
    out_dir = _ensure_dir(req.out_dir)
    infos = []
    for l in sorted(corpora):
        path = out_dir / f"patches_{req.source_tag}_l{l:02d}.bsp"
        patches.save_patch_set(corpora[l], path)
        infos.append({"l": l, "count": len(corpora[l]), "path": str(path)})

    report_path = out_dir / "corpus_report.json"
    _write_json(
        report_path,
        {
            "config": {
                "manifest": req.manifest,
                "regions_dir": req.regions_dir,
                "sizes": sizes,
                "per_region_count": req.per_region_count,
                "seed": req.seed,
                "source_tag": req.source_tag,
                "strict_dims": req.strict_dims,
            },
            "counts": {str(l): report.counts[l] for l in sorted(report.counts)},
            "regions_used": report.regions_used,
            "regions_empty": report.regions_empty,
            "skipped_by_size": {str(l): v for l, v in sorted(report.skipped_by_size.items())},
        },
    )
    return {
        "corpora": infos,
        "regions_used": report.regions_used,
        "regions_empty": report.regions_empty,
        "report_path": str(report_path),
    }


# ---------------------------------------------------------------------------
# Training


def _train_one(corpus_path: str, cfg: filtertrain.TrainingConfig, out_path: Path) -> dict:
    corpus = patches.load_patch_set(corpus_path)
    bank, report = filtertrain.train_filters(corpus, cfg)
    imgio.save_filter_bank(bank, out_path)
    info = {
        "path": str(out_path),
        "n": bank.n,
        "l": bank.l,
        "iterations": report.iterations,
        "converged": report.converged,
        "whiteness_max_offdiag": report.whiteness_max_offdiag,
        "whiteness_max_diag_error": report.whiteness_max_diag_error,
    }
    _write_json(
        out_path.with_suffix(out_path.suffix + ".json"),
        {
            "config": {
                "corpus": str(corpus_path),
                "n": cfg.n,
                "l": cfg.l,
                "seed": cfg.seed,
                "max_iterations": cfg.max_iterations,
                "convergence_tolerance": cfg.convergence_tolerance,
                "nonlinearity": cfg.nonlinearity,
            },
            "provenance": bank.provenance,
            "result": info,
        },
    )
    return info


def train_op(req) -> dict:
    corpus = patches.load_patch_set(req.corpus)
    if req.l is not None and req.l != corpus.side:
        raise ConfigError(f"corpus {req.corpus} holds side {corpus.side}, requested l={req.l}")
    cfg = filtertrain.TrainingConfig(
        n=req.n,
        l=corpus.side,
        seed=req.seed,
        max_iterations=req.max_iterations,
        convergence_tolerance=req.convergence_tolerance,
        nonlinearity=req.nonlinearity,
    )
    out_path = Path(req.out)
    if out_path.parent != Path():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    info = _train_one(req.corpus, cfg, out_path)
    return {"bank": info, "report_path": str(out_path.with_suffix(out_path.suffix + ".json"))}


def _grid_train_cell(args) -> dict:
    corpus_path, cfg_kwargs, out_path = args
    return _train_one(corpus_path, filtertrain.TrainingConfig(**cfg_kwargs), Path(out_path))


def train_grid_op(req) -> dict:
    corpus_dir = Path(req.corpus_dir)
    if not corpus_dir.is_dir():
        raise ConfigError(f"corpus directory not found: {corpus_dir}")
    by_side: dict[int, Path] = {}
    for p in sorted(corpus_dir.glob("*.bsp")):
        side = patches.load_patch_set(p).side
        by_side.setdefault(side, p)
    missing = [l for _, l in filtertrain.standard_grid() if l not in by_side]
    if missing:
        raise DataError(
            f"corpus directory {corpus_dir} lacks patch files for sides {sorted(set(missing))}"
        )
    out_dir = _ensure_dir(req.out_dir)

    jobs = []
    for cell_index, (n, l) in enumerate(filtertrain.standard_grid()):
        cfg_kwargs = dict(
            n=n,
            l=l,
            seed=int(np.random.default_rng([req.seed, cell_index]).integers(2**31)),
            max_iterations=req.max_iterations,
            convergence_tolerance=req.convergence_tolerance,
            nonlinearity=req.nonlinearity,
        )
        out_path = out_dir / f"bank_n{n:02d}_l{l:02d}.bsf"
        jobs.append((str(by_side[l]), cfg_kwargs, str(out_path)))

    if req.jobs > 1:
        with ProcessPoolExecutor(max_workers=req.jobs) as pool:
            infos = list(pool.map(_grid_train_cell, jobs))
    else:
        infos = [_grid_train_cell(job) for job in jobs]

    report_path = out_dir / "train_grid_report.json"
    _write_json(
        report_path,
        {
            "config": {
                "corpus_dir": req.corpus_dir,
                "seed": req.seed,
                "max_iterations": req.max_iterations,
                "convergence_tolerance": req.convergence_tolerance,
                "nonlinearity": req.nonlinearity,
            },
            "banks": infos,
        },
    )
    return {"banks": infos, "report_path": str(report_path)}


# ---------------------------------------------------------------------------
# Encoding


def encode_op(req) -> dict:
    manifest = imgio.load_manifest(req.manifest)
    bank = imgio.load_filter_bank(req.bank)
    out_dir = _ensure_dir(req.out_dir)
    done: list[dict] = []
    failures: list[dict] = []
    names_seen: set[str] = set()
    for rec in manifest.records:
        try:
            name = Path(rec.image).stem + ".bst"
            if name in names_seen:
                raise DataError(f"template name collision for {name}")
            names_seen.add(name)
            iris = imgio.load_normalized_iris(rec.image, rec.mask, id=rec.iris_id)
            template = encode(iris, bank)
            imgio.save_template(template, out_dir / name)
            done.append({"image": rec.image, "template": str(out_dir / name)})
        except Exception as exc:
            failures.append({"image": rec.image, "error": f"{type(exc).__name__}: {exc}"})
    report_path = out_dir / "encode_report.json"
    _write_json(
        report_path,
        {
            "config": {"manifest": req.manifest, "bank": req.bank},
            "templates": done,
            "failures": failures,
        },
    )
    return {"templates": done, "failures": failures, "report_path": str(report_path)}


# ---------------------------------------------------------------------------
# Comparison


def _strategies_from(name: str) -> list[matcher.Strategy]:
    if name == "all":
        return list(matcher.ALL_STRATEGIES)
    return [matcher.Strategy(name)]


def compare_op(req) -> dict:
    t = imgio.load_template(req.template_a)
    p = imgio.load_template(req.template_b)
    shift_range = matcher.ShiftRange(req.max_shift)
    scores = matcher.score_all(t, p, _strategies_from(req.strategy), shift_range)
    return {
        "scores": [
            {
                "strategy": s.value,
                "value": sc.value,
                "best_shift": sc.best_shift,
                "valid_bits": sc.valid_bits_at_best_shift,
            }
            for s, sc in scores.items()
        ],
        "fingerprint_match": t.bank_fingerprint == p.bank_fingerprint,
    }


# ---------------------------------------------------------------------------
# Evaluation


def _load_eval_inputs(req) -> tuple[imgio.DatasetManifest, list, evalkit.PairSet, list[str]]:
    manifest = imgio.load_manifest(req.manifest)
    warnings_out: list[str] = []
    for other_path in req.check_disjoint:
        other = imgio.load_manifest(other_path)
        shared = sorted(manifest.subjects & other.subjects)
        if shared:
            warnings_out.append(
                f"manifest {req.manifest} shares {len(shared)} subject(s) with "
                f"{other_path}: {', '.join(shared[:5])}"
                + ("..." if len(shared) > 5 else "")
            )
    images = [
        imgio.load_normalized_iris(rec.image, rec.mask, id=rec.iris_id)
        for rec in manifest.records
    ]
    pairs = evalkit.make_pairs(manifest, seed=req.seed)
    return manifest, images, pairs, warnings_out


def _eval_single_bank(req, images, pairs) -> list[dict]:
    bank = imgio.load_filter_bank(req.bank)
    strategies = _strategies_from(req.strategy)
    shift_range = matcher.ShiftRange(req.max_shift)
    score_sets = evalkit.score_pairs(images, pairs, bank, strategies, shift_range)
    results = []
    for s in strategies:
        report = evalkit.evaluate_scores(score_sets[s])
        entry = {
            "strategy": s.value,
            "bank": req.bank,
            "n": bank.n,
            "l": bank.l,
            "provenance": bank.provenance,
            "d_prime": report.d_prime,
            "eer": report.eer,
            "eer_threshold": report.eer_threshold,
            "roc": [list(pt) for pt in report.roc],
        }
        if req.bootstrap > 0:
            values, summary = evalkit.bootstrap_dprime(score_sets[s], req.bootstrap, req.seed)
            entry["bootstrap"] = {
                "values": values,
                "summary": {
                    "median": summary.median,
                    "q1": summary.q1,
                    "q3": summary.q3,
                    "whisker_low": summary.whisker_low,
                    "whisker_high": summary.whisker_high,
                    "outliers": summary.outliers,
                },
            }
        results.append(entry)
    return results


def _grid_eval_chunk(args) -> list[dict]:
    images_data, pairs_data, bank_paths, bank_indices, strategy_names, max_shift = args
    images = [
        imgio.NormalizedIris(pixels=px, mask=mk, id=iid) for px, mk, iid in images_data
    ]
    pairs = evalkit.PairSet(genuine=pairs_data[0], impostor=pairs_data[1])
    strategies = [matcher.Strategy(s) for s in strategy_names]
    out = []
    for path, index in zip(bank_paths, bank_indices):
        bank = imgio.load_filter_bank(path)
        cells = evalkit.grid_search(
            images, pairs, [bank], strategies, matcher.ShiftRange(max_shift)
        )
        for cell in cells:
            out.append(
                {
                    "bank_index": index,
                    "bank": str(path),
                    "n": cell.n,
                    "l": cell.l,
                    "provenance": cell.provenance,
                    "strategy": cell.strategy.value,
                    "d_prime": cell.d_prime,
                    "eer": cell.eer,
                    "error": cell.error,
                }
            )
    return out


def _eval_grid(req, images, pairs) -> list[dict]:
    banks_dir = Path(req.banks_dir)
    if not banks_dir.is_dir():
        raise ConfigError(f"banks directory not found: {banks_dir}")
    bank_paths = sorted(banks_dir.glob("*.bsf"))
    if not bank_paths:
        raise DataError(f"no *.bsf banks in {banks_dir}")
    strategy_names = [s.value for s in _strategies_from(req.strategy)]
    images_data = [(img.pixels, img.mask, img.id) for img in images]
    pairs_data = (pairs.genuine, pairs.impostor)

    chunks = [
        (
            images_data,
            pairs_data,
            [str(p) for p in bank_paths[i :: req.jobs]],
            list(range(len(bank_paths)))[i :: req.jobs],
            strategy_names,
            req.max_shift,
        )
        for i in range(min(req.jobs, len(bank_paths)))
    ]
    if req.jobs > 1:
        with ProcessPoolExecutor(max_workers=req.jobs) as pool:
            results = [cell for chunk in pool.map(_grid_eval_chunk, chunks) for cell in chunk]
    else:
        results = [cell for chunk in chunks for cell in _grid_eval_chunk(chunk)]

    strategy_order = {s.value: i for i, s in enumerate(matcher.ALL_STRATEGIES)}
    results.sort(
        key=lambda c: (
            c["error"] is not None,
            -(c["d_prime"] if c["d_prime"] is not None else -np.inf),
            c["eer"] if c["eer"] is not None else np.inf,
            c["n"],
            c["l"],
            strategy_order[c["strategy"]],
            c["bank_index"],
        )
    )
    for rank, cell in enumerate(results, start=1):
        cell["rank"] = rank
    return results


def eval_op(req) -> dict:
    if (req.bank is None) == (req.banks_dir is None):
        raise ConfigError("provide exactly one of 'bank' (single mode) or 'banks_dir' (grid mode)")
    _, images, pairs, warn = _load_eval_inputs(req)
    report: dict = {
        "config": {
            "manifest": req.manifest,
            "bank": req.bank,
            "banks_dir": req.banks_dir,
            "strategy": req.strategy,
            "seed": req.seed,
            "max_shift": req.max_shift,
            "bootstrap": req.bootstrap,
        },
        "pairs": {
            "genuine": len(pairs.genuine),
            "impostor": len(pairs.impostor),
            "skipped_single_image": pairs.skipped_single_image,
        },
        "warnings": warn,
    }
    if req.bank is not None:
        report["results"] = _eval_single_bank(req, images, pairs)
    else:
        report["ranking"] = _eval_grid(req, images, pairs)

    out_path = Path(req.out)
    if out_path.parent != Path():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out_path, report)

    if req.roc_csv and req.bank is not None:
        lines = ["strategy,threshold,far,frr"]
        for entry in report["results"]:
            for t, a, r in entry["roc"]:
                lines.append(f"{entry['strategy']},{t!r},{a!r},{r!r}")
        Path(req.roc_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")

    return {"report_path": str(out_path), "report": report}


def compare_methods_op(req) -> dict:
    def bootstrap_values(path: str) -> list[float]:
        report = _load_json(path)
        results = report.get("results") or []
        for entry in results:
            if "bootstrap" in entry:
                return entry["bootstrap"]["values"]
        raise DataError(f"report {path} contains no bootstrap d-prime values")

    a = bootstrap_values(req.report_a)
    b = bootstrap_values(req.report_b)
    statistic, p_value = evalkit.compare_methods(a, b, req.permutations, req.seed)
    return {"statistic": statistic, "p_value": p_value, "n_a": len(a), "n_b": len(b)}
