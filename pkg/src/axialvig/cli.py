#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""``axialvig`` command line: checks, gradients, costs, forward, benchmarks."""

from __future__ import print_function
from __future__ import absolute_import

import os
import os.path
import sys


##
## Thread caps, before anything imports numpy
##

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

## invalid values are reported later by ``bench.thread_count()``
_threads = os.environ.get("AXIALVIG_THREADS", "1").strip()
if _threads.isdigit() and int(_threads) > 0:
    for _var in THREAD_VARIABLES:
        os.environ[_var] = _threads

## pylint: disable=wrong-import-position
import argparse

from axialvig import __version__
from axialvig.common import AxialVigError, UsageError, ConfigurationError, \
     DimensionError, FormatError, VerificationFailure, stderr, err, \
     debug, die, set_debug, format_last_exception
from axialvig import common
from axialvig import report
from axialvig.report import Config, load_config_file, stdout, text_py
from axialvig import bench
from axialvig import checks
from axialvig import gradcheck
from axialvig import graph
from axialvig import gvt
from axialvig import zoo
from axialvig.tensor import DeterministicRng, as_dtype, require_rank4


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERRUPT = 130


usage_msg = """
  %(exname)s {-h|--help}
  %(exname)s {-v|--version}
  %(exname)s [--debug] [--config FILE] COMMAND [OPTIONS...]"""

description_msg = """\
Run the verification suites, gradient checks, cost accounting, forward
passes and graph-construction benchmarks of axial vision GNN models.

Reports go to the standard output through the configured output engine;
``--json FILE`` also stores the machine readable report."""

epilog_msg = """\
Commands:

  bench-graph  time the SVGA, DAGC and KNN graph constructions
  check        brute-force oracle and invariant suites
  gradcheck    tape gradients against finite differences
  count        parameter and MAC accounting of a model
  forward      run a model on an image tensor, store the logits
  trace        store the connection masks of one graph construction

Exit status:

  0 success, 1 verification failure, 2 usage or configuration error,
  130 interrupted.

Environment:

  AXIALVIG_THREADS          worker threads for BLAS/OpenMP (default 1)
  AXIALVIG_CONFIG_FILENAME  run configuration file to use
  DEBUG_%(exname_upper)s            show full tracebacks

Configuration files lookup order is: $AXIALVIG_CONFIG_FILENAME, the
``--config`` option, then ``./.%(exname)s.rc``.  The bundled
``axialvig.rc.reference`` holds the defaults."""


##
## Command line parsing
##

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 2 and the ``Error:`` prefix."""

    def error(self, message):
        self.print_usage(sys.stderr)
        die("Error: %s" % message, errlvl=EXIT_USAGE)


def _add_json(parser):
    parser.add_argument('--json', metavar="FILE", dest="json",
                        help="Also write the machine readable report.")


def _add_dtype(parser):
    parser.add_argument('--dtype', choices=("f32", "f64"), default=None,
                        help="Element type (default from config).")


def _add_source(parser, what):
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--input', metavar="FILE.gvt",
                       help="Read the %s from a GVT file." % what)
    group.add_argument('--random', metavar="SEED", type=int,
                       help="Draw the %s from a seeded generator "
                       "(default seed 0)." % what)


def parse_cmd_line(usage, description, epilog, exname, version, argv=None):

    kwargs = dict(usage=usage,
                  description=description,
                  epilog="\n" + epilog,
                  prog=exname,
                  formatter_class=argparse.RawTextHelpFormatter)

    parser = _Parser(**kwargs)
    parser.add_argument('-v', '--version',
                        help="show program's version number and exit",
                        action="version", version=version)
    parser.add_argument('-d', '--debug',
                        help="Enable debug mode (show full tracebacks).",
                        action="store_true", dest="debug")
    parser.add_argument('-c', '--config', metavar="FILE",
                        help="Run configuration file.")

    commands = parser.add_subparsers(dest="command", metavar="COMMAND",
                                     parser_class=_Parser)
    commands.required = True

    p = commands.add_parser("bench-graph", help="time graph constructions")
    p.add_argument('--height', type=int, default=56)
    p.add_argument('--width', type=int, default=56)
    p.add_argument('--channels', type=int, default=48)
    p.add_argument('-k', '--k', type=int, default=8, dest="k")
    p.add_argument('--method', choices=graph.METHODS + ("all", ),
                   default=None,
                   help="Construction to time (default from config).")
    p.add_argument('--repeats', type=int, default=None)
    p.add_argument('--warmup', type=int, default=None)
    p.add_argument('--seed', type=int, default=0)
    _add_dtype(p)
    p.add_argument('--output', metavar="FILE", dest="json",
                   help="Alias of --json.")
    _add_json(p)

    p = commands.add_parser("check", help="oracle and invariant suites")
    p.add_argument('suite', nargs="?", default="all",
                   choices=checks.SUITES + ("all", ))
    p.add_argument('--seeds', type=int, default=None)
    p.add_argument('--tolerance', type=float, default=None)
    p.add_argument('--corrupt-threshold', type=float, default=0.0,
                   dest="corrupt_threshold", help=argparse.SUPPRESS)
    _add_json(p)

    p = commands.add_parser("gradcheck", help="finite-difference gradients")
    p.add_argument('--block', choices=list(gradcheck.BLOCKS), default="dagc")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--step', type=float, default=None)
    p.add_argument('--tolerance', type=float, default=None)
    _add_json(p)

    p = commands.add_parser("count", help="parameters and MACs")
    p.add_argument('--model', default="S",
                   help="S, M, B, toy, a variant such as B-k9, or a model "
                   "config file.")
    p.add_argument('--resolution', type=int, default=None)
    p.add_argument('--output', metavar="FILE", dest="json",
                   help="Alias of --json.")
    _add_json(p)

    p = commands.add_parser("forward", help="run a model")
    p.add_argument('--model', default="toy")
    _add_source(p, "images")
    p.add_argument('--weights', metavar="FILE",
                   help="GVT container of weights (default: seeded init).")
    p.add_argument('--weights-seed', type=int, default=0, dest="weights_seed")
    p.add_argument('--output', metavar="FILE", default="logits.gvt")
    p.add_argument('--top-k', type=int, default=None, dest="top_k")
    _add_dtype(p)
    _add_json(p)

    p = commands.add_parser("trace", help="store a graph construction")
    p.add_argument('--method', choices=graph.METHODS, default="dagc")
    p.add_argument('--height', type=int, default=8)
    p.add_argument('--width', type=int, default=8)
    p.add_argument('--channels', type=int, default=4)
    p.add_argument('-k', '--k', type=int, default=2, dest="k")
    _add_source(p, "feature map")
    p.add_argument('--output', metavar="FILE", default="trace.gvt")
    _add_dtype(p)
    _add_json(p)

    return parser.parse_args(sys.argv[1:] if argv is None else argv)


##
## Commands
##

def _dtype(opts, config):
    return opts.dtype or config["default_dtype"]


def cmd_bench_graph(opts, config):
    method = opts.method
    if method is None:
        methods = config["bench_methods"]
        if not isinstance(methods, (list, tuple)):
            die("Invalid type for 'bench_methods' in config file. "
                "A 'list' type is required, and a %r was given."
                % type(methods).__name__, errlvl=EXIT_USAGE)
    elif method == "all":
        methods = bench.BENCH_ORDER
    else:
        methods = (method, )
    spec = bench.RunSpec(
        height=opts.height, width=opts.width, channels=opts.channels,
        k=opts.k, methods=methods,
        repeats=config["bench_repeats"] if opts.repeats is None
        else opts.repeats,
        warmup=config["bench_warmup"] if opts.warmup is None
        else opts.warmup,
        seed=opts.seed, dtype=_dtype(opts, config), output=opts.json)
    return report.bench_tree(bench.bench_graph(spec))


def cmd_check(opts, config):
    result = checks.run_checks(
        opts.suite,
        seeds=config["oracle_seeds"] if opts.seeds is None else opts.seeds,
        tolerance=(config["oracle_tolerance"] if opts.tolerance is None
                   else opts.tolerance),
        threshold_bias=opts.corrupt_threshold)
    for case in result.failures():
        err("case %s/%s failed: %s" % (case.suite, case.case, case.detail))
    return report.check_tree(result)


def cmd_gradcheck(opts, config):
    result = gradcheck.check_block(
        opts.block, seed=opts.seed,
        step=config["gradcheck_step"] if opts.step is None else opts.step,
        tolerance=(config["gradcheck_tolerance"] if opts.tolerance is None
                   else opts.tolerance))
    for entry in result.failures():
        err("gradient of %s off by %.3g (relative)"
            % (entry.name, entry.max_rel_err))
    return report.gradcheck_tree(result)


def _model_config(spec):
    try:
        return zoo.resolve_model(spec)
    except ConfigurationError as e:
        raise UsageError(str(e))


def cmd_count(opts, config):
    model = _model_config(opts.model)
    return report.count_tree(zoo.count_macs(model, opts.resolution))


def _load_input(path, dtype):
    tensor = gvt.load_tensor(path)
    require_rank4(tensor, "input %s" % path)
    return tensor.astype(dtype)


def cmd_forward(opts, config):
    model_config = _model_config(opts.model)
    if opts.weights:
        model = zoo.load_weights(model_config, opts.weights)
    else:
        model = zoo.build(model_config, seed=opts.weights_seed,
                          dtype=_dtype(opts, config))
    dtype = zoo.model_dtype(model)
    if opts.input:
        images = _load_input(opts.input, dtype)
        source = opts.input
    else:
        seed = opts.random or 0
        images = zoo.random_images(model_config, seed, dtype=dtype)
        source = "random:%d" % seed
    logits = zoo.forward(model, images)
    gvt.save_tensor(opts.output, logits)
    debug("logits written to %s" % opts.output)
    k = config["top_k"] if opts.top_k is None else opts.top_k
    return report.forward_tree(model_config.name, source, opts.output,
                               logits.shape, zoo.top_k(logits, k))


def cmd_trace(opts, config):
    dtype = as_dtype(_dtype(opts, config))
    if opts.input:
        x = _load_input(opts.input, dtype)
    else:
        x = DeterministicRng(opts.random or 0).uniform(
            (1, opts.channels, opts.height, opts.width), -1.0, 1.0, dtype)
    try:
        spec = graph.GraphSpec(opts.method, opts.k).validate(*x.shape[2:])
    except ConfigurationError as e:
        raise UsageError(str(e))
    if opts.method == "dagc" and min(x.shape[2:]) < 2:
        raise UsageError("DAGC statistics need H and W of at least 2.")
    _x_final, trace = graph.build_graph(x, spec)
    stored = trace.to_tensor()
    gvt.save_tensor(opts.output, stored)
    if opts.method == "knn":
        connections = int(trace.indices.size)
    else:
        connections = trace.connections
    comparisons = trace.comparisons + getattr(trace, "stats_comparisons", 0)
    return report.trace_tree(opts.method, x.shape, opts.k, opts.output,
                             stored.shape, connections, comparisons)


COMMANDS = {
    "bench-graph": cmd_bench_graph,
    "check": cmd_check,
    "gradcheck": cmd_gradcheck,
    "count": cmd_count,
    "forward": cmd_forward,
    "trace": cmd_trace,
}


def run(opts, config):
    """Run one command; returns its report data tree."""
    data = COMMANDS[opts.command](opts, config)
    content = report.render(data, config.get("output_engine", text_py),
                            config)
    config.get("publish", stdout)(content)
    if opts.json:
        report.write_json(opts.json, data)
        debug("json report written to %s" % opts.json)
    return data


##
## Main
##

def main(argv=None):

    ## Basic environment infos

    reference_config = os.path.join(
        os.path.dirname(os.path.realpath(__file__)),
        "axialvig.rc.reference")

    basename = "axialvig"

    debug_varname = "DEBUG_%s" % basename.upper()
    set_debug(os.environ.get(debug_varname, False))

    i = lambda x: x % {'exname': basename,
                       'exname_upper': basename.upper()}

    opts = parse_cmd_line(usage=i(usage_msg),
                          description=i(description_msg),
                          epilog=i(epilog_msg),
                          exname=basename,
                          version=__version__,
                          argv=argv)
    set_debug(common.DEBUG or opts.debug)

    ## config file lookup resolution
    rc = None
    for enforce_file_existence, fun in [
            (True, lambda: os.environ.get('AXIALVIG_CONFIG_FILENAME')),
            (True, lambda: opts.config),
            (False, lambda: ".%s.rc" % basename)]:
        rc = fun()
        if rc:
            if not os.path.exists(rc):
                if enforce_file_existence:
                    die("Error: File %r does not exists." % rc,
                        errlvl=EXIT_USAGE)
                else:
                    continue  ## rc valued, but file does not exists
            else:
                break

    config = load_config_file(
        os.path.expanduser(rc),
        default_filename=reference_config,
        fail_if_not_present=False)

    config = Config(config)

    try:
        bench.thread_count()
        data = run(opts, config)

    except KeyboardInterrupt:
        if common.DEBUG:
            err("Keyboard interrupt received while running '%s':"
                % (basename, ))
            stderr(format_last_exception())
        else:
            err("Keyboard Interrupt. Bailing out.")
        sys.exit(EXIT_INTERRUPT)  ## Actual SIGINT as bash process convention.
    except Exception as e:  ## pylint: disable=broad-except
        if isinstance(e, VerificationFailure):
            errlvl = EXIT_FAILURE
        elif isinstance(e, (UsageError, ConfigurationError, DimensionError,
                            FormatError)):
            errlvl = EXIT_USAGE
        elif isinstance(e, AxialVigError):
            errlvl = EXIT_FAILURE
        else:
            errlvl = 255
        if common.DEBUG:
            err("Exception while running '%s':"
                % (basename, ))
            stderr(format_last_exception())
        else:
            message = "%s" % e
            err(message)
            stderr("  (set %s environment variable, "
                   "or use ``--debug`` to see full traceback)" %
                   (debug_varname, ))
        sys.exit(errlvl)

    sys.exit(EXIT_OK if data["passed"] in (None, True) else EXIT_FAILURE)


##
## Launch program
##

if __name__ == "__main__":
    main()
