import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import config
from .datasets import dataset_summary, dataset_to_jsonl, generate_dataset, parse_task_spec, read_dataset
from .engine import prompt_for_graph
from .errors import ConfigError, GraphTokensError, OracleRefusedError
from .exporter import (
    render_fande,
    render_gradcheck,
    render_reports,
    render_stability,
    reports_from_json,
)
from .fande import PredictionLog, analyze, analyze_manifest, read_prediction_log
from .gradcheck import default_gradcheck_configs, gradcheck_all
from .graph import read_graph_json, write_graph_json
from .operator_registry import registry
from .retriever import exact_pcst_oracle, oracle_ratio, retrieve_subgraph
from .schemas import CliConfig, EncoderConfig, PoolingConfig
from .training import lora_grid, redundancy_study, stability_report, train_runs
from .workspace import Workspace

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class CliParser(argparse.ArgumentParser):
    """argparse that raises ConfigError instead of exiting, so every usage error maps to exit code 2."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def parse_seeds(text: Optional[str]) -> List[int]:
    if text is None:
        return []
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds expects comma-separated integers, got '{text}'") from e
    if not seeds:
        raise ConfigError("--seeds needs at least one seed")
    return seeds


def parse_query(text: str) -> List[float]:
    """Inline JSON list, or a path to a file holding one."""
    path = Path(text)
    raw = path.read_text(encoding="utf-8") if path.is_file() else text
    try:
        values = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"--query is neither a JSON list nor a readable file: {text}") from e
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
        raise ConfigError("--query must be a JSON list of numbers")
    return [float(v) for v in values]


class App:
    def __init__(self, args: argparse.Namespace, out=sys.stdout):
        self.args = args
        self.out = out
        self.workspace = Workspace()
        self.cli = CliConfig(
            subcommand=args.command,
            inputs=[str(p) for p in getattr(args, "inputs", []) or []],
            out=getattr(args, "out", None),
            seeds=parse_seeds(getattr(args, "seeds", None)),
            format=getattr(args, "format", "table"),
            regime=getattr(args, "regime", None),
        )
        # output paths are checked before any work starts
        for path in (self.cli.out, getattr(args, "predictions", None)):
            if path:
                self.workspace.check_output(path)
        for path in self.cli.inputs:
            self.workspace.check_input(path)

    def emit(self, text: str):
        if self.cli.out:
            self.workspace.write_text(self.cli.out, text)
        else:
            self.out.write(text)

    def say(self, line: str):
        self.out.write(line + "\n")

    def run_config(self):
        cfg = self.workspace.load_run_config(self.args.config)
        updates = {}
        if getattr(self.args, "operator", None):
            updates["pooling"] = PoolingConfig.model_validate({**cfg.pooling.model_dump(), "operator": self.args.operator})
        if getattr(self.args, "encoder", None):
            updates["encoder"] = EncoderConfig.model_validate({**cfg.encoder.model_dump(), "kind": self.args.encoder})
        if self.cli.regime:
            updates["regime"] = self.cli.regime
        if self.cli.seeds:
            updates["seeds"] = self.cli.seeds
        for key in ("epochs", "lr"):
            if getattr(self.args, key, None) is not None:
                updates[key] = getattr(self.args, key)
        return cfg.model_copy(update=updates) if updates else cfg

    def dataset_for(self, cfg):
        source = getattr(self.args, "dataset", None) or cfg.dataset
        if source:
            return read_dataset(self.workspace.check_input(source))
        if cfg.synthetic is not None:
            return generate_dataset(cfg.synthetic, cfg.dataset_seed)
        raise ConfigError(f"Run config '{cfg.name}' names no dataset; pass --dataset")

    # --- SUBCOMMANDS ---

    def cmd_generate(self):
        spec = parse_task_spec(self.workspace.read_text(self.args.spec))
        examples = generate_dataset(spec, self.args.seed)
        self.emit(dataset_to_jsonl(examples))
        summary = dataset_summary(examples)
        self.say(
            f"examples={summary['examples']} dual_tagged={summary['dual_tagged']} "
            f"redundancy_fraction={summary['redundancy_fraction']:.2%} mean_nodes={summary['mean_nodes']:.2f}"
        )
        return 0

    def cmd_retrieve(self):
        graph = read_graph_json(self.workspace.read_text(self.args.graph))
        query = parse_query(self.args.query)
        sub, objective, prized = retrieve_subgraph(graph, query, self.args.top_n, self.args.edge_cost)
        self.emit(write_graph_json(sub) + "\n")
        self.say(f"objective={objective:.4f} nodes={sub.node_count} edges={len(sub.edges)}")
        if self.args.oracle:
            try:
                exact = exact_pcst_oracle(prized)
            except OracleRefusedError as e:
                logger.warning(f"Oracle refused: {e}")
                self.say(f"oracle=refused ({e})")
            else:
                self.say(f"oracle={exact:.4f} ratio={oracle_ratio(objective, exact):.4f}")
        return 0

    def cmd_pool(self):
        graph = read_graph_json(self.workspace.read_text(self.args.graph))
        cfg = self.run_config()
        query = parse_query(self.args.query) if self.args.query else None
        prompt = prompt_for_graph(
            graph,
            cfg,
            seed=self.args.seed,
            query=query,
            textualize=not self.args.no_text,
            top_n=self.args.top_n,
            edge_cost=self.args.edge_cost,
        )
        self.emit(json.dumps(prompt.as_dict(), indent=2) + "\n")
        self.say(
            f"{cfg.pooling.operator}: {prompt.soft_token_count} soft tokens, {prompt.text_line_count} text lines"
        )
        return 0

    def cmd_train(self):
        cfg = self.run_config()
        dataset = self.dataset_for(cfg)
        seeds = self.cli.seeds or cfg.seeds
        if self.args.lora_grid:
            reports = lora_grid(cfg, dataset, seeds)
            runs = []
        else:
            report, runs = train_runs(cfg, dataset, seeds)
            reports = [report]
        if self.args.predictions:
            log = PredictionLog(record for run in runs for record in run.predictions)
            self.workspace.write_text(self.args.predictions, log.to_jsonl())
        self.emit(render_reports(reports, self.cli.format))
        return 0

    def cmd_gradcheck(self):
        if self.args.config:
            configs = [self.run_config()]
        else:
            configs = [
                c for c in default_gradcheck_configs()
                if self.args.operator in (None, c.pooling.operator) and self.args.encoder in (None, c.encoder.kind)
            ]
            if not configs:
                raise ConfigError("No default gradcheck config matches the --operator/--encoder filter")
        reports = gradcheck_all(configs, self.cli.seeds or [1])
        self.emit(render_gradcheck(reports, self.cli.format))
        failing = [r.name for r in reports if not r.passed]
        if failing:
            self.say(f"FAIL {len(failing)} of {len(reports)} configs: {', '.join(failing)}")
            return 3
        worst = max(r.max_error for r in reports)
        self.say(f"PASS max_rel_err={worst:.3e} over {len(reports)} configs")
        return 0

    def cmd_fande(self):
        seeds = self.cli.seeds or None
        if self.args.from_dataset:
            dataset = read_dataset(self.args.from_dataset)
            feature, edge = self.args.feature_model or "mlp", self.args.edge_model or "gcn"
            records, _ = redundancy_study(
                dataset,
                seeds or config.DEFAULT_SEEDS,
                feature,
                edge,
                epochs=self.args.epochs if self.args.epochs is not None else config.EPOCHS,
                lr=self.args.lr if self.args.lr is not None else config.LR,
            )
            log = PredictionLog(records)
            if self.args.predictions:
                self.workspace.write_text(self.args.predictions, log.to_jsonl())
            results = [analyze(log, feature, edge, seeds, Path(self.args.from_dataset).stem)]
        elif self.args.log:
            if not (self.args.feature_model and self.args.edge_model):
                raise ConfigError("fande --log needs --feature-model and --edge-model")
            log = read_prediction_log(self.args.log)
            results = [analyze(log, self.args.feature_model, self.args.edge_model, seeds, Path(self.args.log).stem)]
        else:
            results = analyze_manifest(self.args.manifest, seeds)
        self.emit(render_fande(results, self.cli.format))
        return 0

    def cmd_report(self):
        reports = []
        for path in self.args.inputs:
            try:
                reports.extend(reports_from_json(self.workspace.read_text(path)))
            except (ValueError, TypeError) as e:
                raise ConfigError(f"Not a run report: {path}: {e}") from e
        rows = stability_report(reports)
        self.emit(render_stability(rows, self.cli.format))
        return 0

    def cmd_operators(self):
        schemas = registry.get_all_metadata()
        if self.cli.format == "json":
            self.emit(json.dumps([s.model_dump() for s in schemas], indent=2) + "\n")
            return 0
        lines = []
        for s in schemas:
            aux = f" aux={','.join(s.aux_losses)}" if s.aux_losses else ""
            params = ", ".join(f"{name}:{p.type}" for name, p in s.params.items())
            lines.append(f"{s.type:<8} {s.family:<10} {s.description}{aux}")
            if params:
                lines.append(f"{'':<8} params: {params}")
        self.emit("\n".join(lines) + "\n")
        return 0

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.args.command}")
        return handler()


def _add_output(p, formats=True):
    p.add_argument("--out", help="Write the main artifact here instead of stdout")
    if formats:
        p.add_argument("--format", choices=["json", "csv", "table"], default="table")


def _add_run_config(p, required=False):
    p.add_argument("--config", required=required, default=None if required else "mean-attn",
                   help="Preset name or path to a run-config JSON file")
    p.add_argument("--operator", choices=list(registry.operator_classes))
    p.add_argument("--encoder", choices=["mlp", "gcn", "attn", "sgformer", "transformer"])
    p.add_argument("--regime", choices=["frozen", "adapted"])


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="graphtokens", description="Graph-to-soft-token pooling toolkit")
    parser.add_argument("--verbose", action="store_true", help="DEBUG logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("generate", help="Generate a synthetic dataset")
    p.add_argument("spec", help="Synthetic task spec JSON")
    p.add_argument("--seed", type=int, default=0)
    _add_output(p, formats=False)

    p = sub.add_parser("retrieve", help="PCST subgraph retrieval for a query")
    p.add_argument("graph")
    p.add_argument("--query", required=True, help="JSON list or file with the query embedding")
    p.add_argument("--top-n", type=int, default=config.TOP_N)
    p.add_argument("--edge-cost", type=float, default=config.EDGE_COST)
    p.add_argument("--oracle", action="store_true", help="Also solve exactly (N <= 12) and print the ratio")
    _add_output(p, formats=False)

    p = sub.add_parser("pool", help="Turn one graph into soft tokens")
    p.add_argument("graph")
    _add_run_config(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--query", help="Retrieve a subgraph for this query first")
    p.add_argument("--top-n", type=int, help="Nodes that receive a prize when retrieving")
    p.add_argument("--edge-cost", type=float, help="Uniform edge cost when retrieving")
    p.add_argument("--no-text", action="store_true", help="Drop the textualized scaffold")
    _add_output(p, formats=False)

    p = sub.add_parser("train", help="Multi-seed training run")
    _add_run_config(p)
    p.add_argument("--dataset", help="Dataset JSON lines (overrides the run config)")
    p.add_argument("--seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lora-grid", action="store_true", help="Sweep the LoRA rank/scale grid")
    p.add_argument("--predictions", help="Also write per-seed predictions as JSON lines")
    _add_output(p)

    p = sub.add_parser("gradcheck", help="Finite-difference check of every trainable block")
    p.add_argument("--config", help="Check one run config instead of the default set")
    p.add_argument("--operator", choices=list(registry.operator_classes))
    p.add_argument("--encoder", choices=["mlp", "gcn", "attn", "sgformer", "transformer"])
    p.add_argument("--regime", choices=["frozen", "adapted"])
    p.add_argument("--seeds")
    _add_output(p)

    p = sub.add_parser("fande", help="Feature/edge redundancy diagnostic")
    p.add_argument("--manifest", default=str(config.FANDE_MANIFEST))
    p.add_argument("--log", help="A single prediction log")
    p.add_argument("--from-dataset", help="Train feature-only and edge-aware models on this dataset first")
    p.add_argument("--feature-model")
    p.add_argument("--edge-model")
    p.add_argument("--seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--predictions", help="With --from-dataset, also write the prediction log")
    _add_output(p)

    p = sub.add_parser("report", help="Merge run reports into a stability table")
    p.add_argument("inputs", nargs="+")
    _add_output(p)

    p = sub.add_parser("operators", help="List pooling operators")
    p.add_argument("--format", choices=["json", "table"], default="table")
    return parser


def main(argv: Optional[Sequence[str]] = None, out=sys.stdout) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return ConfigError.exit_code

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, config.settings.log_level.upper(), logging.INFO),
        format=LOG_FORMAT,
    )
    try:
        return App(args, out).run()
    except GraphTokensError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        # pydantic ValidationError from a CLI override
        print(f"error: {e}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
