import json
import subprocess

import torchvision

from tablesieve_finetune import cli


def trim_manifest(corpus, dst, per_split):
    """Write a reduced dataset.jsonl keeping a balanced slice of each
    split; per_split maps split tag -> samples per class."""
    lines = (corpus / "corpus" / "dataset.jsonl").read_text().splitlines()
    kept = [lines[0]]
    budget = {
        (tag, label): n for tag, n in per_split.items() for label in ("genuine", "layout")
    }
    for line in lines[1:]:
        entry = json.loads(line)
        key = (entry.get("split"), entry["label"])
        if budget.get(key, 0) > 0:
            budget[key] -= 1
            kept.append(line)
    assert not any(budget.values()), f"corpus exhausted: {budget}"
    dst.write_text("\n".join(kept) + "\n")
    return dst


def test_cli_end_to_end(corpus, tmp_path):
    data = trim_manifest(corpus, tmp_path / "small.jsonl", {"train": 8, "val": 4})
    out = tmp_path / "out"
    proc = subprocess.run(
        [
            "finetune",
            "--backbone", "vgg16",
            "--mode", "frozen",
            "--data", str(data),
            "--images", str(corpus / "images"),
            "--out", str(out),
            "--max-epochs", "2",
            "--batch-size", "8",
            "--allow-random-init",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "model.json").exists()
    assert (out / "vgg16-frozen.nngraph.npz").exists()
    history = json.loads((out / "history.json").read_text())
    assert history["spec"]["backbone"] == "vgg16"
    assert len(history["epochs"]) == 2
    assert "best val accuracy" in proc.stdout


def test_missing_required_flag_is_usage_error(capsys):
    assert cli.main([]) == 1
    assert "required" in capsys.readouterr().err


def test_injection_requires_html_features(tmp_path, capsys):
    rc = cli.main(
        ["--backbone", "vgg16", "--mode", "injection",
         "--data", str(tmp_path / "d.jsonl"), "--out", str(tmp_path)]
    )
    assert rc == 1
    assert "--html-features" in capsys.readouterr().err


def test_html_features_rejected_outside_injection(tmp_path, capsys):
    rc = cli.main(
        ["--backbone", "vgg16", "--mode", "frozen",
         "--data", str(tmp_path / "d.jsonl"), "--out", str(tmp_path),
         "--html-features", str(tmp_path / "f.csv")]
    )
    assert rc == 1
    assert "injection" in capsys.readouterr().err


def test_missing_manifest_is_data_error(tmp_path, capsys):
    rc = cli.main(
        ["--backbone", "vgg16", "--mode", "frozen",
         "--data", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path),
         "--allow-random-init"]
    )
    assert rc == 2
    assert "absent.jsonl" in capsys.readouterr().err


def test_unsplit_manifest_is_data_error(corpus, tmp_path, capsys):
    lines = (corpus / "corpus" / "dataset.jsonl").read_text().splitlines()
    stripped = [lines[0]]
    for line in lines[1:5]:
        entry = json.loads(line)
        entry.pop("split", None)
        stripped.append(json.dumps(entry, sort_keys=True))
    data = tmp_path / "unsplit.jsonl"
    data.write_text("\n".join(stripped) + "\n")
    rc = cli.main(
        ["--backbone", "vgg16", "--mode", "frozen",
         "--data", str(data), "--images", str(corpus / "images"),
         "--out", str(tmp_path), "--allow-random-init"]
    )
    assert rc == 2
    assert "split" in capsys.readouterr().err


def test_unavailable_weights_exit_code(corpus, tmp_path, monkeypatch, capsys):
    def refuse(*args, **kwargs):
        raise RuntimeError("weight download blocked")

    monkeypatch.setattr(torchvision.models, "vgg16", refuse)
    rc = cli.main(
        ["--backbone", "vgg16", "--mode", "frozen",
         "--data", str(corpus / "corpus" / "dataset.jsonl"),
         "--images", str(corpus / "images"), "--out", str(tmp_path)]
    )
    assert rc == 3
    assert "allow-random-init" in capsys.readouterr().err
