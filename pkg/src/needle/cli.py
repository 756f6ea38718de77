"""needlectl: command-line client for the needle backend.

Five command groups (service, directory, query, generator, ui) plus the
bench harness, all speaking to the /v1 HTTP API. Exit codes: 0 success,
1 runtime/API failure, 2 usage error.

Config resolution for the API address: --api-addr flag, then
NEEDLE_API_ADDR, then ~/.needle/cli.conf (key=value lines), then the
built-in default. `--output structured` makes a command print exactly
one JSON document on stdout.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import click
import requests

from . import __version__, config
from .service import ui_dist_dir

CONF_PATH = Path.home() / ".needle" / "cli.conf"
DEFAULT_UI_ADDR = "127.0.0.1:8462"


@dataclass
class CliConfig:
    api_addr: str
    output: str  # table | plain | structured
    verbose: bool = False

    @property
    def base_url(self) -> str:
        return f"http://{self.api_addr}"


def load_config(api_addr: str | None, output: str | None, verbose: bool) -> CliConfig:
    file_values: dict[str, str] = {}
    if CONF_PATH.exists():
        for line in CONF_PATH.read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                key, _, value = line.partition("=")
                file_values[key.strip()] = value.strip()
    addr = api_addr or os.environ.get("NEEDLE_API_ADDR") \
        or file_values.get("api_addr") or config.DEFAULT_API_ADDR
    out = output or file_values.get("output") or "table"
    return CliConfig(api_addr=addr, output=out, verbose=verbose)


class ApiDown(click.ClickException):
    exit_code = 1


def api_request(cfg: CliConfig, method: str, path: str, timeout: float = 120.0, **kw):
    try:
        resp = requests.request(method, cfg.base_url + path, timeout=timeout, **kw)
    except requests.RequestException as exc:
        raise ApiDown(f"API unreachable at {cfg.base_url}: {exc}")
    return resp


def fail(resp) -> None:
    detail = ""
    try:
        detail = json.dumps(resp.json().get("detail"))
    except ValueError:
        detail = resp.text[:300]
    raise ApiDown(f"API error {resp.status_code}: {detail}")


def emit(cfg: CliConfig, payload, render) -> None:
    """structured: one JSON document; otherwise the human renderer."""
    if cfg.output == "structured":
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        render(payload)


def table(rows: list[list[str]], headers: list[str]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(str(cell)))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*[str(c) for c in row]) for row in rows]
    return "\n".join(lines)


# --- root --------------------------------------------------------------------

@click.group(invoke_without_command=True)
@click.option("--api-addr", default=None, help="backend host:port")
@click.option("--output", type=click.Choice(["table", "plain", "structured"]), default=None)
@click.option("--verbose", is_flag=True, default=False)
@click.option("--version", "show_version", is_flag=True, help="report component versions")
@click.pass_context
def main(ctx, api_addr, output, verbose, show_version):
    """Natural-language image retrieval over a local index."""
    ctx.obj = load_config(api_addr, output, verbose)
    if show_version:
        lines = [f"cli: {__version__}"]
        try:
            resp = api_request(ctx.obj, "GET", "/v1/version", timeout=3.0)
            body = resp.json()
            lines.append(f"backend: {body['backend']}")
            lines.append(f"ui: {body['ui']}")
        except (ApiDown, ValueError, KeyError):
            lines.append("backend: unreachable")
            lines.append("ui: unreachable")
        click.echo("\n".join(lines))
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(0)


# --- service group -----------------------------------------------------------------

@main.group()
def service():
    """Manage the backend process."""


def _pidfile() -> Path:
    return config.data_dir() / "backend.pid"


def _health_ok(cfg: CliConfig) -> bool:
    try:
        return api_request(cfg, "GET", "/v1/health", timeout=2.0).status_code == 200
    except ApiDown:
        return False


@service.command("start")
@click.pass_obj
def service_start(cfg: CliConfig):
    """Launch the backend and wait for it to come up."""
    if _health_ok(cfg):
        click.echo("already running")
        return
    data = config.data_dir()
    log_dir = data / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = open(log_dir / "backend.log", "ab")
    env = dict(os.environ, NEEDLE_API_ADDR=cfg.api_addr)
    proc = subprocess.Popen(
        [sys.executable, "-m", "needle.server", "--addr", cfg.api_addr],
        stdout=log_file, stderr=log_file, env=env, start_new_session=True,
    )
    _pidfile().parent.mkdir(parents=True, exist_ok=True)
    _pidfile().write_text(str(proc.pid))
    deadline = time.monotonic() + 30.0
    while time.monotonic() < deadline:
        if _health_ok(cfg):
            click.echo(f"backend up at http://{cfg.api_addr} (pid {proc.pid})")
            return
        if proc.poll() is not None:
            raise ApiDown(f"backend exited with code {proc.returncode}; see {log_dir}/backend.log")
        time.sleep(0.2)
    raise ApiDown("backend did not become healthy within 30s")


@service.command("stop")
@click.pass_obj
def service_stop(cfg: CliConfig):
    pidfile = _pidfile()
    if not pidfile.exists():
        click.echo("not running")
        return
    pid = int(pidfile.read_text().strip())
    try:
        os.kill(pid, signal.SIGTERM)
        for _ in range(50):
            try:
                os.kill(pid, 0)
                time.sleep(0.1)
            except ProcessLookupError:
                break
    except ProcessLookupError:
        pass
    pidfile.unlink(missing_ok=True)
    click.echo("stopped")


@service.command("restart")
@click.pass_context
def service_restart(ctx):
    ctx.invoke(service_stop)
    ctx.invoke(service_start)


@service.command("status")
@click.pass_obj
def service_status(cfg: CliConfig):
    resp = api_request(cfg, "GET", "/v1/status", timeout=5.0)
    if resp.status_code != 200:
        fail(resp)
    body = resp.json()

    def render(body):
        rows = [[name, state] for name, state in sorted(body["services"].items())]
        click.echo(table(rows, ["service", "state"]))
        if body["directories"]:
            rows = [
                [d["id"], d["path"], "yes" if d["enabled"] else "no",
                 d["imageCount"], f"{d['progress']:.0%}"]
                for d in body["directories"]
            ]
            click.echo(table(rows, ["id", "path", "enabled", "images", "progress"]))
        rows = [
            [g["priority"], g["name"], "yes" if g["enabled"] else "no",
             "yes" if g["healthy"] else "no"]
            for g in body["generators"]
        ]
        click.echo(table(rows, ["priority", "engine", "enabled", "healthy"]))

    emit(cfg, body, render)


@service.command("log")
@click.option("--follow", is_flag=True)
@click.option("--lines", default=50, show_default=True)
@click.pass_obj
def service_log(cfg: CliConfig, follow, lines):
    """Print (and optionally tail) the backend log."""
    path = config.data_dir() / "logs" / "backend.log"
    if not path.exists():
        raise ApiDown(f"no log file at {path}")
    content = path.read_text().splitlines()
    for line in content[-lines:]:
        click.echo(line)
    if follow:
        with open(path) as fh:
            fh.seek(0, os.SEEK_END)
            try:
                while True:
                    line = fh.readline()
                    if line:
                        click.echo(line.rstrip("\n"))
                    else:
                        time.sleep(0.25)
            except KeyboardInterrupt:
                pass


@service.command("update")
def service_update():
    """Self-update is not bundled; point your package manager at a newer release."""
    click.echo("in-place updates are not supported by this build; "
               "install a newer release with pip")


# --- directory group ---------------------------------------------------------------------

@main.group()
def directory():
    """Register and manage indexed image directories."""


def _progress_bar(fraction: float, width: int = 30) -> str:
    filled = int(fraction * width)
    return "[" + "#" * filled + "-" * (width - filled) + f"] {fraction:.0%}"


@directory.command("add")
@click.argument("path")
@click.option("--progress", is_flag=True, help="poll until indexing completes")
@click.pass_obj
def directory_add(cfg: CliConfig, path, progress):
    resp = api_request(cfg, "POST", "/v1/directories", json={"path": path})
    if resp.status_code not in (200, 202):
        fail(resp)
    entry = resp.json()
    if progress:
        while True:
            body = api_request(cfg, "GET", f"/v1/directories/{entry['id']}").json()
            click.echo("\r" + _progress_bar(body["progress"]), nl=False)
            if body["progress"] >= 1.0:
                click.echo()
                break
            time.sleep(0.25)
    emit(cfg, entry, lambda e: click.echo(
        f"directory {e['id']}: {e['path']} ({e['imageCount']} images)"
    ))


@directory.command("list")
@click.pass_obj
def directory_list(cfg: CliConfig):
    resp = api_request(cfg, "GET", "/v1/directories")
    if resp.status_code != 200:
        fail(resp)
    body = resp.json()

    def render(entries):
        if not entries:
            click.echo("no directories registered")
            return
        rows = [
            [e["id"], e["path"], "yes" if e["enabled"] else "no",
             e["imageCount"], f"{e['progress']:.0%}"]
            for e in entries
        ]
        click.echo(table(rows, ["id", "path", "enabled", "images", "progress"]))

    emit(cfg, body, render)


@directory.command("describe")
@click.argument("directory_id", type=int)
@click.pass_obj
def directory_describe(cfg: CliConfig, directory_id):
    resp = api_request(cfg, "GET", f"/v1/directories/{directory_id}")
    if resp.status_code != 200:
        fail(resp)

    def render(e):
        for key in ("id", "path", "enabled", "createdAt", "imageCount", "progress"):
            click.echo(f"{key}: {e[key]}")

    emit(cfg, resp.json(), render)


@directory.command("modify")
@click.argument("directory_id", type=int)
@click.option("--set", "assignments", multiple=True,
              help="non-interactive edit, e.g. --set enabled=false")
@click.pass_obj
def directory_modify(cfg: CliConfig, directory_id, assignments):
    """Edit directory flags (interactive on a TTY, --set otherwise)."""
    if not assignments:
        if not sys.stdin.isatty():
            raise click.UsageError("not a TTY: use --set enabled=true|false")
        current = api_request(cfg, "GET", f"/v1/directories/{directory_id}")
        if current.status_code != 200:
            fail(current)
        enabled = click.confirm("enabled?", default=current.json()["enabled"])
        assignments = (f"enabled={'true' if enabled else 'false'}",)
    body = {}
    for assignment in assignments:
        key, _, value = assignment.partition("=")
        if key.strip() != "enabled" or value.strip().lower() not in ("true", "false"):
            raise click.UsageError(f"unsupported assignment {assignment!r}")
        body["enabled"] = value.strip().lower() == "true"
    resp = api_request(cfg, "PATCH", f"/v1/directories/{directory_id}", json=body)
    if resp.status_code != 200:
        fail(resp)
    emit(cfg, resp.json(), lambda e: click.echo(
        f"directory {e['id']} enabled={str(e['enabled']).lower()}"
    ))


@directory.command("remove")
@click.argument("directory_id", type=int)
@click.pass_obj
def directory_remove(cfg: CliConfig, directory_id):
    resp = api_request(cfg, "DELETE", f"/v1/directories/{directory_id}")
    if resp.status_code != 204:
        fail(resp)
    click.echo(f"removed directory {directory_id}")


# --- query group ------------------------------------------------------------------------------

@main.group()
def query():
    """Run retrieval queries."""


@query.command("run")
@click.argument("prompt")
@click.option("-n", "count", type=int, required=True, help="number of results")
@click.option("--m", "m", type=int, default=None, help="guide images per query")
@click.option("--resolution", type=click.Choice(["SMALL", "MEDIUM", "LARGE"]), default=None)
@click.option("--seed", type=int, default=None, help="generation seed (reproducible runs)")
@click.option("--verbose", is_flag=True, help="print per-(guide, embedder) rankings")
@click.pass_obj
def query_run(cfg: CliConfig, prompt, count, m, resolution, seed, verbose):
    """Search the index with a natural-language prompt."""
    if count < 1:
        raise click.BadParameter("-n must be >= 1")
    overrides = {}
    if m is not None:
        overrides["m"] = m
    if resolution is not None:
        overrides["resolution"] = resolution
    if seed is not None:
        overrides["seed"] = seed
    resp = api_request(cfg, "POST", "/v1/query",
                       json={"prompt": prompt, "n": count, "overrides": overrides or None})
    if resp.status_code != 200:
        fail(resp)
    body = resp.json()

    def render(body):
        if not body["results"]:
            click.echo("no results (index empty or nothing matched)")
        for rank, r in enumerate(body["results"], start=1):
            click.echo(f"{rank}. {r['path'] or r['imageId']} {r['score']:.9g}")
        if verbose:
            dropped = [g["id"] for g in body["guides"] if not g["kept"]]
            for g in body["guides"]:
                flag = "kept" if g["kept"] else "dropped (outlier)"
                click.echo(f"guide {g['id']} engine={g['engineName']} seed={g['seed']} {flag}")
            for source in body["sources"]:
                click.echo(f"-- source guide={source['guideId']} "
                           f"embedder={source['embedderName']}")
                for rank, hit in enumerate(source["hits"][:count], start=1):
                    click.echo(f"   {rank}. {hit['imageId']} {hit['distance']:.9g}")
            if dropped:
                click.echo(f"dropped guides: {', '.join(dropped)}")
        ui_addr = os.environ.get("NEEDLE_UI_ADDR", DEFAULT_UI_ADDR)
        from urllib.parse import quote

        click.echo(f"preview: http://{ui_addr}/#/search?prompt={quote(prompt)}")

    emit(cfg, body, render)


# --- generator group ----------------------------------------------------------------------------

@main.group()
def generator():
    """Inspect and configure text-to-image engines."""


@generator.command("list")
@click.pass_obj
def generator_list(cfg: CliConfig):
    resp = api_request(cfg, "GET", "/v1/generators")
    if resp.status_code != 200:
        fail(resp)
    body = resp.json()

    def render(body):
        rows = [
            [g["priority"], g["name"], g["kind"],
             "yes" if g["enabled"] else "no", "yes" if g["healthy"] else "no"]
            for g in body["generators"]
        ]
        click.echo(table(rows, ["priority", "name", "kind", "enabled", "healthy"]))

    emit(cfg, body, render)


@generator.command("config")
@click.option("--set", "assignments", multiple=True,
              help="e.g. --set mock.enabled=false")
@click.option("--order", default=None, help="comma-separated engine names, first = priority 0")
@click.pass_obj
def generator_config(cfg: CliConfig, assignments, order):
    """Edit engine priorities and enablement (flags; TTY editor not bundled)."""
    if not assignments and not order:
        raise click.UsageError("nothing to change: use --set name.enabled=bool or --order a,b,c")
    current = api_request(cfg, "GET", "/v1/generators")
    if current.status_code != 200:
        fail(current)
    revision = current.json()["revision"]
    if order:
        names = [n.strip() for n in order.split(",") if n.strip()]
        resp = api_request(cfg, "PATCH", "/v1/generators",
                           json={"revision": revision, "orderedNames": names})
        if resp.status_code != 200:
            fail(resp)
        revision = resp.json()["revision"]
    if assignments:
        per_engine: dict[str, dict] = {}
        for assignment in assignments:
            target, _, value = assignment.partition("=")
            name, _, key = target.partition(".")
            if key != "enabled" or value.strip().lower() not in ("true", "false"):
                raise click.UsageError(f"unsupported assignment {assignment!r}")
            per_engine[name] = {"enabled": value.strip().lower() == "true"}
        resp = api_request(cfg, "PATCH", "/v1/generators",
                           json={"revision": revision, "perEngine": per_engine})
        if resp.status_code != 200:
            fail(resp)
    click.echo("generator configuration updated")


# --- ui group ------------------------------------------------------------------------------------

@main.group()
def ui():
    """Serve the built Web UI."""


def _ui_pidfile() -> Path:
    return config.data_dir() / "ui.pid"


@ui.command("start")
@click.option("--addr", default=None, help=f"host:port (default {DEFAULT_UI_ADDR})")
@click.pass_obj
def ui_start(cfg: CliConfig, addr):
    dist = ui_dist_dir()
    if dist is None:
        raise ApiDown("no built Web UI found: build the frontend first (frontend/dist)")
    addr = addr or os.environ.get("NEEDLE_UI_ADDR", DEFAULT_UI_ADDR)
    host, port = config.split_addr(addr)
    proc = subprocess.Popen(
        [sys.executable, "-m", "http.server", str(port),
         "--bind", host, "--directory", str(dist)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, start_new_session=True,
    )
    _ui_pidfile().parent.mkdir(parents=True, exist_ok=True)
    _ui_pidfile().write_text(str(proc.pid))
    time.sleep(0.3)
    if proc.poll() is not None:
        raise ApiDown(f"ui server exited immediately (port {port} busy?)")
    click.echo(f"web ui at http://{addr}/ (pid {proc.pid})")


@ui.command("stop")
def ui_stop():
    pidfile = _ui_pidfile()
    if not pidfile.exists():
        click.echo("ui not running")
        return
    try:
        os.kill(int(pidfile.read_text().strip()), signal.SIGTERM)
    except (ProcessLookupError, ValueError):
        pass
    pidfile.unlink(missing_ok=True)
    click.echo("ui stopped")


# --- bench group -----------------------------------------------------------------------------------

@main.group()
def bench():
    """Synthetic retrieval benchmark."""


@bench.command("run")
@click.option("--corpus-seed", type=int, default=42, show_default=True)
@click.option("--corpus-size", type=int, default=2000, show_default=True)
@click.option("--out", "out_path", default=None, help="write the TSV report here")
@click.option("--ablations", is_flag=True, help="also run single-guide/single-embedder variants")
def bench_run(corpus_seed, corpus_size, out_path, ablations):
    """Index a synthetic corpus and score retrieval quality (MAP/MRR)."""
    import tempfile

    from .embedders import EmbedderSpec, embed_batch
    from .fusion import QueryPlan, run_query
    from .genhub import EngineSpec, GeneratorHub, Resolution
    from .synthbench import build_corpus, build_query_suite, evaluate
    from .vecstore import HnswParams, VectorStore

    specs = [
        EmbedderSpec("colorhist64", "builtin:colorhist64", 64, 1.0, True),
        EmbedderSpec("grid64", "builtin:grid64", 64, 1.0, True),
    ]
    click.echo(f"building corpus: {corpus_size} images, seed {corpus_seed}")
    corpus = build_corpus(corpus_size, corpus_seed)
    scenes = {img.image_id: img.scene for img in corpus}
    with tempfile.TemporaryDirectory(prefix="needle-bench-") as td:
        store = VectorStore(td)
        for spec in specs:
            store.create_collection(spec.name, spec.dim, HnswParams())
        click.echo("indexing corpus")
        for spec in specs:
            coll = store.get(spec.name)
            for img in corpus:
                coll.insert(img.image_id, embed_batch(spec, [img.pixels])[0])
        hub = GeneratorHub([EngineSpec("mock", "mock", 0, True)])
        suite = build_query_suite(scenes)

        def make_run(run_specs, m):
            def run(q):
                plan = QueryPlan(m=m, k=100, n=100, resolution=Resolution.SMALL,
                                 seed=corpus_seed * 100003 + len(q.text))
                res = run_query(q.text, 100, plan, hub=hub, specs=run_specs, store=store)
                return [doc for doc, _ in res.results], res.timings
            return run

        click.echo(f"running {len(suite)} queries (ensemble m=2, l={len(specs)})")
        report = evaluate(suite, make_run(specs, m=2))
        click.echo(report.summary())
        if ablations:
            for spec in specs:
                solo = evaluate(suite, make_run([spec], m=1))
                click.echo(f"ablation m=1 {spec.name}: {solo.summary()}")
        if out_path:
            Path(out_path).write_text(report.to_tsv())
            click.echo(f"report written to {out_path}")
        store.close()


if __name__ == "__main__":
    main()
