"""Smoke test for the `dota` extension module.

    cd crates/python && maturin develop --release && python python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

import dota


def check(cond, what):
    if not cond:
        sys.exit(f"smoke test failed: {what}")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        prefix = os.path.join(tmp, "toy")
        out = dota.synth(k=4, d=8, n=1200, perturb_deg=25.0, aniso=True, seed=7, out_prefix=prefix)
        clf, records = out["classifier"], out["records"]
        check(clf.num_classes == 4 and clf.dim == 8, "classifier shape")
        check(len(records) == 1200, "record count")
        check(0.0 < out["bayes_oracle_acc"] <= 1.0, "bayes accuracy")
        with open(prefix + ".truth.json") as f:
            check(json.load(f)["class_names"] == clf.class_names, "truth manifest")

        probs = clf.zero_shot(records[0][1])
        check(abs(sum(probs) - 1.0) < 1e-12, "zero-shot probabilities")
        check(abs(math.hypot(*dota.normalize([3.0, 4.0])) - 1.0) < 1e-15, "normalize")

        cfg = dota.AdaptConfig(gamma=0.1, feedback="oracle")
        check(cfg.to_dict()["gamma"] == 0.1, "config round trip")

        # one sample at a time, with a checkpoint halfway
        a = dota.Session(clf, cfg)
        for rid, x, label in records[:600]:
            rec = a.process(rid, x, label)
        check(rec["index"] == 599 and a.position == 600, "position")
        ckpt = os.path.join(tmp, "a.ckpt")
        a.save_checkpoint(ckpt)
        b = dota.Session.load_checkpoint(ckpt)
        b.run(records[600:])

        # whole stream in one call, then from the file
        c = dota.Session(clf, cfg)
        summary = c.run(records, window=200)
        check(b.log() == c.log(), "checkpoint resume")
        check(summary["n_samples"] == 1200 and summary["feedback_count"] > 0, "summary")
        check(summary == c.summary(200), "summary from log")
        d = dota.Session(dota.Classifier.load(prefix + ".dcls"), cfg)
        d.run_file(prefix + ".demb", window=200)
        check(d.log() == c.log(), "file run")
        check(len(c.improvement_curve(200)) == 1001, "improvement curve")
        check(all(n > 0 for n in c.counts) and len(c.means) == 4, "model state")
        check(len(c.precision()) == 8, "precision shape")

        report = os.path.join(tmp, "r.jsonl")
        c.write_report(report)
        with open(report) as f:
            check(len(f.readlines()) == 1201, "report lines")

        raw = dota.read_stream(prefix + ".demb")
        copy = os.path.join(tmp, "copy.demb")
        dota.write_stream(copy, [(r[0], r[1], r[2]) for r in raw])
        check(dota.read_stream(copy) == raw, "stream round trip")

        for bad in (dict(gamma=1.5), dict(sigma2=0.0), dict(strategy="loudest")):
            try:
                dota.AdaptConfig(**bad)
            except ValueError:
                continue
            sys.exit(f"smoke test failed: accepted {bad}")
        try:
            dota.Session(clf, dota.AdaptConfig(feedback="human"))
            sys.exit("smoke test failed: human mode accepted")
        except ValueError:
            pass
        try:
            dota.Classifier.load(os.path.join(tmp, "missing.dcls"))
            sys.exit("smoke test failed: missing file accepted")
        except OSError:
            pass
        with open(ckpt, "r+b") as f:
            f.seek(-3, os.SEEK_END)
            byte = f.read(1)
            f.seek(-3, os.SEEK_END)
            f.write(bytes([byte[0] ^ 0x20]))
        try:
            dota.Session.load_checkpoint(ckpt)
            sys.exit("smoke test failed: corrupt checkpoint accepted")
        except dota.AdaptError:
            pass

    print(f"ok: {summary['n_samples']} samples, overall {summary['overall_acc']:.3f}, zero-shot {summary['zs_acc']:.3f}")


if __name__ == "__main__":
    main()
