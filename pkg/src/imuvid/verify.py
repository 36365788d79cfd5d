"""Self-contained verification suites behind ``imuvid verify``.

Three suites: gradient checks for every differentiable op plus the composite
model paths, metric implementations against brute-force references, and a
corruption fuzz over every binary format. Each check yields a (name, passed,
detail) record; the CLI maps any failure to exit code 1.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import reference
from .autodiff import Tensor
from .align import AlignmentHead, project_and_normalize, sigmoid_contrastive_loss
from .errors import FormatError, ImuvidError
from .gradcheck import grad_check
from .imu_encoder import EncoderConfig, IMUEncoder, PatchConfig
from .metrics import balanced_accuracy, macro_f1, mrr, recall_at_k
from .video_encoder import VideoClipEncoder, VideoEncoderConfig


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = f" ({self.detail})" if self.detail else ""
        return f"[{self.suite}] {status} {self.name}{detail}"


# -- gradcheck suite -----------------------------------------------------------------


def _positive(rng, shape):
    return rng.random(shape) + 0.5


def _op_checks() -> list[tuple[str, Callable, list[tuple], Optional[list]]]:
    """(name, fn, shapes, explicit inputs or None); 3 shape sets per op."""
    rng = np.random.default_rng(7)
    checks = []

    def add_check(name, fn, shape_sets, inputs_fn=None):
        for i, shapes in enumerate(shape_sets):
            inputs = None if inputs_fn is None else inputs_fn(rng, shapes)
            checks.append((f"{name}[{i}]", fn, shapes, inputs))

    three = lambda *s: list(s)
    add_check("add", ad.add, three([(3, 4), (3, 4)], [(2, 1, 5), (4, 5)], [(6,), ()]))
    add_check("sub", ad.sub, three([(3, 4), (3, 4)], [(2, 5), (5,)], [(4, 1), (1, 3)]))
    add_check("mul", ad.mul, three([(3, 4), (3, 4)], [(2, 5), (5,)], [(4, 1), (1, 3)]))
    add_check(
        "div", ad.div, three([(3, 4), (3, 4)], [(2, 5), (5,)], [(6,), (6,)]),
        inputs_fn=lambda r, s: [r.standard_normal(s[0]), _positive(r, s[1])],
    )
    add_check("neg", ad.neg, three([(3, 4)], [(7,)], [(2, 3, 4)]))
    add_check("power2", lambda x: ad.power(x, 2.0), three([(3, 4)], [(7,)], [(2, 3)]))
    add_check(
        "power3", lambda x: ad.power(x, 3.0), three([(3, 4)], [(5,)], [(2, 2)]),
    )
    add_check("exp", ad.exp, three([(3, 4)], [(7,)], [(2, 3)]))
    add_check(
        "log", ad.log, three([(3, 4)], [(7,)], [(2, 3)]),
        inputs_fn=lambda r, s: [_positive(r, s[0])],
    )
    add_check(
        "sqrt", ad.sqrt, three([(3, 4)], [(7,)], [(2, 3)]),
        inputs_fn=lambda r, s: [_positive(r, s[0])],
    )
    add_check("tanh", ad.tanh, three([(3, 4)], [(7,)], [(2, 3)]))
    add_check("gelu", ad.gelu, three([(3, 4)], [(7,)], [(2, 3)]))
    add_check("softplus", ad.softplus, three([(3, 4)], [(7,)], [(2, 3)]))
    add_check("softmax", lambda x: ad.softmax(x, axis=-1), three([(3, 4)], [(7,)], [(2, 3, 5)]))
    add_check(
        "log_softmax", lambda x: ad.log_softmax(x, axis=-1),
        three([(3, 4)], [(7,)], [(2, 3, 5)]),
    )
    add_check(
        "layer_norm", lambda x, g, b: ad.layer_norm(x, g, b),
        three([(3, 4), (4,), (4,)], [(2, 3, 8), (8,), (8,)], [(5, 6), (6,), (6,)]),
    )
    add_check(
        "matmul", ad.matmul,
        three([(3, 4), (4, 5)], [(2, 3, 4), (4, 5)], [(2, 2, 3), (2, 3, 4)]),
    )
    add_check(
        "pairwise_dot", ad.pairwise_dot, three([(3, 4), (5, 4)], [(2, 6), (2, 6)], [(4, 3), (4, 3)]),
    )
    add_check("reshape", lambda x: ad.reshape(x, (-1,)), three([(3, 4)], [(2, 3, 2)], [(6,)]))
    add_check(
        "transpose", lambda x: ad.transpose(x, (1, 0)), three([(3, 4)], [(2, 5)], [(4, 4)]),
    )
    add_check(
        "concat", lambda a, b: ad.concat([a, b], axis=0),
        three([(2, 3), (4, 3)], [(1, 5), (2, 5)], [(3, 2), (3, 2)]),
    )
    add_check(
        "getitem", lambda x: ad.getitem(x, (slice(None), 0)),
        three([(3, 4)], [(5, 2)], [(2, 6)]),
    )
    add_check(
        "broadcast_to", lambda x: ad.broadcast_to(x, (4, 3, 2)),
        three([(3, 2)], [(1, 2)], [(2,)]),
    )
    add_check("sum", lambda x: ad.tensor_sum(x, axis=-1), three([(3, 4)], [(7,)], [(2, 3, 4)]))
    add_check("mean", lambda x: ad.tensor_mean(x, axis=0), three([(3, 4)], [(7,)], [(2, 3)]))
    add_check("exact_sum", ad.exact_sum, three([(3, 4)], [(7,)], [(2, 3)]))
    add_check(
        "l2_normalize", lambda x: ad.l2_normalize(x, axis=-1),
        three([(3, 4)], [(7,)], [(2, 5)]),
    )
    add_check(
        "dropout", lambda x: ad.dropout(x, 0.4, np.random.default_rng(3)),
        three([(3, 4)], [(7,)], [(2, 5)]),
    )
    add_check(
        "linear_layer",
        lambda x, w, b: ad.add(ad.matmul(x, w), b),
        three([(3, 4), (4, 2), (2,)], [(2, 3), (3, 3), (3,)], [(5, 4), (4, 1), (1,)]),
    )
    add_check(
        "softmax_xent",
        lambda x: ad.neg(
            ad.tensor_mean(ad.getitem(ad.log_softmax(x, axis=-1), (np.arange(3), np.array([0, 2, 1]))))
        ),
        three([(3, 4)], [(3, 5)], [(3, 3)]),
    )
    return checks


def _composite_checks() -> list[tuple[str, Callable, list[tuple]]]:
    patch = PatchConfig(context_length=64, patch_length=16, stride=16)
    imu_cfg = EncoderConfig(model_dim=16, num_layers=1, num_heads=2, ff_dim=24, dropout=0.0)
    imu = IMUEncoder(patch, imu_cfg, seed=1)
    imu.eval()

    vid_cfg = VideoEncoderConfig(
        frame_height=8, frame_width=8, frame_channels=1, tubelet=(2, 4, 4),
        model_dim=16, num_layers=1, num_heads=2, ff_dim=24, dropout=0.0,
    )
    vid = VideoClipEncoder(vid_cfg, seed=1)
    vid.eval()

    head = AlignmentHead(imu_dim=8, video_dim=8, proj_dim=6, rng=np.random.default_rng(5))

    def loss_path(i_raw, v_raw, t_prime, bias):
        i_vecs = project_and_normalize(i_raw, head.imu_head)
        v_vecs = project_and_normalize(v_raw, head.vid_head)
        return sigmoid_contrastive_loss(i_vecs, v_vecs, ad.exp(t_prime), bias)

    return [
        ("imu_encoder_full", lambda x: imu.window_embedding(x), [(1, 64, 6)]),
        ("video_encoder_toy", lambda x: vid(x), [(1, 10, 8, 8, 1)]),
        ("projection_sigmoid_loss", loss_path, [(3, 8), (3, 8), (), ()]),
    ]


def _corrupted_gradient_op(x: Tensor) -> Tensor:
    """Negative control: square with a deliberately wrong (2x off) backward."""
    out = x.data * x.data

    def bwd(g):
        ad._accumulate(x, g * x.data)  # correct backward would be 2*x*g

    return ad._from_op(out, (x,), bwd)


def run_gradcheck_suite(inject_fault: bool = False) -> list[CheckResult]:
    results = []
    for name, fn, shapes, inputs in _op_checks():
        rep = grad_check(fn, shapes, inputs=inputs)
        results.append(
            CheckResult("gradcheck", name, rep.passed, f"max rel err {rep.max_rel_error:.2e}")
        )
    for name, fn, shapes in _composite_checks():
        rep = grad_check(fn, shapes)
        results.append(
            CheckResult("gradcheck", name, rep.passed, f"max rel err {rep.max_rel_error:.2e}")
        )
    # the checker itself must catch a wrong gradient
    rep = grad_check(_corrupted_gradient_op, [(3, 3)])
    results.append(
        CheckResult(
            "gradcheck",
            "negative_control_detected",
            not rep.passed,
            "corrupted op correctly rejected" if not rep.passed else "corrupted op slipped through",
        )
    )
    if inject_fault:
        results.append(
            CheckResult(
                "gradcheck", "injected_fault", rep.passed,
                "deliberate fault injected via --inject-fault",
            )
        )
    return results


# -- metrics suite ---------------------------------------------------------------------


def run_metrics_suite(cases: int = 1000, seed: int = 0, tolerance: float = 1e-12) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        c = int(rng.integers(2, 11))
        n = int(rng.integers(5, 201))
        labels = rng.integers(0, c, size=n)
        preds = rng.integers(0, c, size=n)
        rankings = np.stack([rng.permutation(c) for _ in range(n)])
        pairs = [
            (balanced_accuracy(preds, labels), reference.balanced_accuracy_reference(preds, labels)),
            (macro_f1(preds, labels), reference.macro_f1_reference(preds, labels)),
            (mrr(rankings, labels), reference.mrr_reference(rankings, labels)),
            (recall_at_k(rankings, labels, 1), reference.recall_at_k_reference(rankings, labels, 1)),
            (recall_at_k(rankings, labels, 3), reference.recall_at_k_reference(rankings, labels, 3)),
        ]
        worst = max(worst, max(abs(a - b) for a, b in pairs))
    return [
        CheckResult(
            "metrics",
            f"brute_force_agreement_{cases}_cases",
            worst <= tolerance,
            f"max abs deviation {worst:.2e}",
        )
    ]


# -- formats fuzz suite -------------------------------------------------------------------


def _make_valid_files(tmp: Path) -> list[tuple[str, Path, Callable[[Path], object]]]:
    from .datatypes import IMUWindow, RawRecording, VideoClip
    from . import formats as fm

    rng = np.random.default_rng(0)
    files = []

    ckpt = tmp / "model.ckpt"
    fm.write_checkpoint(
        ckpt,
        {"w": rng.standard_normal((4, 3)).astype(np.float32), "b": np.zeros(3, np.float32)},
        {"kind": "demo", "note": 1},
    )
    files.append(("checkpoint", ckpt, fm.read_checkpoint))

    imu = tmp / "rec.imuw"
    fm.write_imu_file(
        imu,
        RawRecording(values=rng.standard_normal((300, 6)).astype(np.float32), sample_rate_hz=100.0),
    )
    files.append(("imu", imu, fm.read_imu_file))

    win = tmp / "win.imuw"
    fm.write_window_file(win, IMUWindow(values=rng.standard_normal((250, 6)).astype(np.float32)))
    files.append(("window", win, fm.read_window_file))

    clip = tmp / "clip.clip"
    fm.write_clip_file(clip, VideoClip(frames=rng.random((10, 8, 8, 1)).astype(np.float32)))
    files.append(("clip", clip, fm.read_clip_file))

    emb = tmp / "vecs.embd"
    fm.write_embedding_file(
        emb, 5, {f"id{i}": rng.standard_normal(5).astype(np.float32) for i in range(4)}
    )
    files.append(("embedding", emb, fm.read_embedding_file))

    empty_emb = tmp / "empty.embd"
    fm.write_embedding_file(empty_emb, 5, {})
    files.append(("embedding_empty", empty_emb, fm.read_embedding_file))
    return files


def run_formats_suite(cases: int = 1000, seed: int = 0) -> list[CheckResult]:
    """Random truncations/corruptions: zero crashes, located errors only."""
    from .errors import InputError

    rng = np.random.default_rng(seed)
    crashes = []
    silent_truncations = []
    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir)
        files = _make_valid_files(tmp)
        for name, path, reader in files:
            reader(path)  # sanity: valid files parse

        for case in range(cases):
            name, path, reader = files[case % len(files)]
            blob = bytearray(path.read_bytes())
            kind = rng.integers(0, 3)
            if kind == 0 and len(blob) > 1:  # truncate
                cut = int(rng.integers(0, len(blob)))
                blob = blob[:cut]
                must_fail = True
            elif kind == 1:  # flip one byte
                pos = int(rng.integers(0, len(blob)))
                blob[pos] ^= int(rng.integers(1, 256))
                must_fail = False
            else:  # append junk
                blob += bytes(rng.integers(0, 256, size=int(rng.integers(1, 16)), dtype=np.uint8))
                must_fail = True
            target = tmp / f"fuzz_{case}"
            target.write_bytes(bytes(blob))
            try:
                reader(target)
                parsed = True
            except (FormatError, InputError):
                parsed = False
            except Exception as err:  # any other exception is a crash
                crashes.append(f"{name} case {case}: {type(err).__name__}: {err}")
                continue
            if parsed and must_fail:
                silent_truncations.append(f"{name} case {case}")

    results = [
        CheckResult(
            "formats", f"fuzz_{cases}_cases_no_crashes", not crashes,
            crashes[0] if crashes else "all failures were located format errors",
        ),
        CheckResult(
            "formats", "size_disagreements_rejected", not silent_truncations,
            silent_truncations[0] if silent_truncations else
            "every truncation/extension was rejected",
        ),
    ]
    return results


SUITES = {
    "gradcheck": run_gradcheck_suite,
    "metrics": run_metrics_suite,
    "formats": run_formats_suite,
}


def run_suites(which: str, inject_fault: bool = False, cases: int = 1000) -> list[CheckResult]:
    results = []
    names = list(SUITES) if which == "all" else [which]
    for name in names:
        if name == "gradcheck":
            results.extend(run_gradcheck_suite(inject_fault=inject_fault))
        elif name == "metrics":
            results.extend(run_metrics_suite(cases=cases))
        elif name == "formats":
            results.extend(run_formats_suite(cases=cases))
        else:
            raise ImuvidError(f"unknown verification suite {name!r}")
    return results
