# -*- coding: utf-8 -*-
"""Run configuration, report data trees, output engines and publish actions.

A report is a plain data tree.  Output engines turn it into text chunks
(``engine(data, opts)``), publish actions consume the chunks, and
``write_json`` stores the machine readable part of the same tree.

"""

from __future__ import print_function

import collections
import errno
import glob
import json
import numbers
import os
import os.path
import sys
import textwrap

try:
    import pystache
except ImportError:  ## pragma: no cover
    pystache = None

try:
    import mako
except ImportError:  ## pragma: no cover
    mako = None

from .common import FormatError, stderr, die, indent, file_get_contents, \
     file_put_contents
from . import common


SCHEMA_VERSION = 1


##
## config file functions
##

_config_env = {}


def available_in_config(f):
    _config_env[f.__name__] = f
    return f


def load_config_file(filename, default_filename=None,
                     fail_if_not_present=True):
    """Execute the reference file, then ``filename``, in one namespace."""

    config = _config_env.copy()
    for fname in [default_filename, filename]:
        if fname and os.path.exists(fname):
            if not os.path.isfile(fname):
                die("config file path '%s' exists but is not a file !"
                    % (fname, ), errlvl=2)
            content = file_get_contents(fname)
            try:
                code = compile(content, fname, 'exec')
                exec(code, config)  ## pylint: disable=exec-used
            except SyntaxError as e:
                die('Syntax error in config file: %s\n%s'
                    'File %s, line %i'
                    % (str(e),
                       (indent(e.text.rstrip(), "  | ") + "\n") if e.text else "",
                       e.filename, e.lineno), errlvl=2)
        elif fname and fail_if_not_present:
            die('%s config file is not found and is required.' % (fname, ),
                errlvl=2)

    return config


class Config(dict):

    def __getitem__(self, label):
        if label not in self.keys():
            die("Missing value in config file for key '%s'." % label, errlvl=2)
        return super(Config, self).__getitem__(label)


##
## Templates
##

@available_in_config
def ensure_template_file_exists(label, template_name):
    """Return template file path given a label hint and the template name

    ``template_name`` may be the path of a file relative to the current
    directory, otherwise it names one of the bundled
    ``templates/<label>/*.tpl`` files.

    """

    path_file = os.getcwd()
    path_label = os.path.join(os.path.dirname(os.path.realpath(__file__)),
                              "templates", label)

    for ftn in [os.path.join(path_file, template_name),
                os.path.join(path_label, "%s.tpl" % template_name)]:
        if os.path.isfile(ftn):
            return ftn

    templates = sorted(glob.glob(os.path.join(path_label, "*.tpl")))
    if len(templates) > 0:
        msg = ("These are the available %s templates:" % label)
        msg += "\n - " + \
               "\n - ".join(os.path.basename(f).split(".")[0]
                            for f in templates)
        msg += "\nTemplates are located in %r" % path_label
    else:
        msg = "No available %s templates found in %r." \
              % (label, path_label)
    die("Error: Invalid %s template name %r.\n" % (label, template_name) +
        "%s" % msg, errlvl=2)


##
## Data trees
##

def format_value(value):
    """Text form of a report value.

        >>> format_value(0.000123456789)
        '0.000123457'
        >>> format_value(12210000)
        '12,210,000'
        >>> format_value([1, 2])
        '1 2'

    """
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, numbers.Integral):
        return "{:,}".format(int(value))
    if isinstance(value, numbers.Real):
        return "%.6g" % value
    if isinstance(value, (list, tuple)):
        return " ".join(format_value(v) for v in value)
    return "%s" % (value, )


def section(label, rows):
    """``rows`` is an iterable of ``(key, value)`` pairs."""
    return collections.OrderedDict([
        ("label", label),
        ("rows", [collections.OrderedDict([("key", key),
                                           ("value", format_value(value))])
                  for key, value in rows]),
    ])


def make_tree(kind, title, deterministic, sections, passed=None, timing=None):
    return collections.OrderedDict([
        ("schema_version", SCHEMA_VERSION),
        ("kind", kind),
        ("title", title),
        ("passed", passed),
        ("deterministic", deterministic),
        ("timing", timing),
        ("sections", sections),
    ])


def bench_tree(report):
    deterministic = collections.OrderedDict(
        (key, value) for key, value in report.items()
        if key not in ("schema_version", "kind", "timing"))
    spec = report["spec"]
    sections = []
    for method, counts in report["methods"].items():
        rows = list(counts.items())
        rows += [(key, value) for key, value in report["timing"][method].items()]
        sections.append(section(method, rows))
    sections.append(section("summary", [
        ("dagc_knn_per_node_ratio", report["dagc_knn_per_node_ratio"]),
        ("dtype", report["environment"]["dtype"]),
        ("threads", report["environment"]["threads"]),
    ]))
    title = "bench-graph %dx%d C=%d K=%d" % (spec["height"], spec["width"],
                                             spec["channels"], spec["k"])
    passed = all(c["counts_match"] for c in report["methods"].values())
    return make_tree("bench-graph", title, deterministic, sections,
                     passed=passed, timing=report["timing"])


def check_tree(report):
    cases = [collections.OrderedDict([("suite", c.suite), ("case", c.case),
                                      ("passed", c.passed),
                                      ("detail", c.detail)])
             for c in report.cases]
    failures = ["%s/%s" % (c.suite, c.case) for c in report.failures()]
    deterministic = collections.OrderedDict([
        ("suites", list(report.suites)),
        ("cases", cases),
        ("failures", failures),
    ])
    rows = []
    for suite in report.suites:
        total = report.count(suite)
        failed = len([c for c in report.failures() if c.suite == suite])
        rows.append((suite, "%d cases, %d passed, %d failed"
                     % (total, total - failed, failed)))
    sections = [section("summary", rows)]
    if failures:
        sections.append(section("failures", [
            ("%s/%s" % (c.suite, c.case), c.detail)
            for c in report.failures()]))
    return make_tree("check", "check %s" % " ".join(report.suites),
                     deterministic, sections, passed=report.passed)


def gradcheck_tree(report):
    entries = [collections.OrderedDict([
        ("name", e.name), ("shape", list(e.shape)),
        ("max_rel_err", e.max_rel_err), ("max_abs_err", e.max_abs_err),
        ("passed", e.passed)]) for e in report.entries]
    deterministic = collections.OrderedDict([
        ("block", report.block), ("seed", report.seed),
        ("step", report.step), ("tolerance", report.tolerance),
        ("entries", entries), ("notes", list(report.notes)),
    ])
    sections = [section("gradients", [
        (e.name, "rel %.3e  abs %.3e  %s"
         % (e.max_rel_err, e.max_abs_err, "ok" if e.passed else "FAIL"))
        for e in report.entries])]
    if report.notes:
        sections.append(section("notes", [
            ("note%d" % idx, note) for idx, note in enumerate(report.notes)]))
    return make_tree("gradcheck", "gradcheck %s seed=%d"
                     % (report.block, report.seed),
                     deterministic, sections, passed=report.passed)


def count_tree(report):
    delta = report.reference_delta()
    entries = [collections.OrderedDict([
        ("name", e.name), ("params", e.params), ("macs", e.macs),
        ("graph_macs", e.graph_macs)]) for e in report.entries]
    deterministic = collections.OrderedDict([
        ("model", report.model), ("resolution", report.resolution),
        ("params", report.params), ("macs", report.macs),
        ("graph_macs", report.graph_macs),
        ("total_macs", report.total_macs), ("entries", entries),
        ("reference_delta", list(delta) if delta else None),
    ])
    stage_rows = [(e.name, "params %s  macs %s  graph_macs %s"
                   % (format_value(e.params), format_value(e.macs),
                      format_value(e.graph_macs)))
                  for e in report.entries]
    total_rows = [
        ("params", report.params),
        ("params_m", report.params / 1e6),
        ("conv_macs", report.macs),
        ("graph_macs", report.graph_macs),
        ("gmacs", report.total_macs / 1e9),
    ]
    if delta:
        total_rows += [("reference_params_delta", "%+.1f%%" % (100 * delta[0])),
                       ("reference_macs_delta", "%+.1f%%" % (100 * delta[1]))]
    return make_tree("count", "count %s @%d" % (report.model, report.resolution),
                     deterministic,
                     [section("stages", stage_rows),
                      section("total", total_rows)])


def forward_tree(model_name, source, output, logits_shape, ranked):
    deterministic = collections.OrderedDict([
        ("model", model_name), ("input", source), ("output", output),
        ("logits_shape", list(logits_shape)),
        ("top_k", [[[idx, value] for idx, value in row] for row in ranked]),
    ])
    rows = []
    for image, row in enumerate(ranked):
        for rank, (idx, value) in enumerate(row, 1):
            rows.append(("image%d.top%d" % (image, rank),
                         "%d %.6g" % (idx, value)))
    return make_tree("forward", "forward %s" % model_name, deterministic,
                     [section("logits", [("shape", list(logits_shape)),
                                         ("output", output)]),
                      section("top-k", rows)])


def trace_tree(method, shape, k, output, stored_shape, connections,
               comparisons):
    deterministic = collections.OrderedDict([
        ("method", method), ("shape", list(shape)), ("k", k),
        ("output", output), ("stored_shape", list(stored_shape)),
        ("connections", connections), ("comparisons", comparisons),
    ])
    return make_tree("trace", "trace %s K=%d" % (method, k), deterministic,
                     [section("trace", list(deterministic.items()))])


##
## Schema
##

_NONE = type(None)
_INT = numbers.Integral
_NUMBER = numbers.Real

REPORT_SCHEMA = {
    "type": dict,
    "required": collections.OrderedDict([
        ("schema_version", _INT),
        ("kind", str),
        ("title", str),
        ("passed", (bool, _NONE)),
        ("deterministic", dict),
        ("timing", (dict, _NONE)),
    ]),
    "kinds": {
        "bench-graph": collections.OrderedDict([
            ("spec", dict), ("environment", dict), ("methods", dict),
            ("dagc_knn_per_node_ratio", _NUMBER)]),
        "check": collections.OrderedDict([
            ("suites", list), ("cases", list), ("failures", list)]),
        "gradcheck": collections.OrderedDict([
            ("block", str), ("seed", _INT), ("step", _NUMBER),
            ("tolerance", _NUMBER), ("entries", list), ("notes", list)]),
        "count": collections.OrderedDict([
            ("model", str), ("resolution", _INT), ("params", _INT),
            ("macs", _INT), ("graph_macs", _INT), ("total_macs", _INT),
            ("entries", list), ("reference_delta", (list, _NONE))]),
        "forward": collections.OrderedDict([
            ("model", str), ("input", str), ("output", str),
            ("logits_shape", list), ("top_k", list)]),
        "trace": collections.OrderedDict([
            ("method", str), ("shape", list), ("k", _INT), ("output", str),
            ("stored_shape", list), ("connections", _INT),
            ("comparisons", _INT)]),
    },
}


def _check_fields(payload, fields, where):
    problems = []
    for key, kind in fields.items():
        if key not in payload:
            problems.append("%s: missing key %r" % (where, key))
        elif kind is _INT and isinstance(payload[key], bool) or \
                not isinstance(payload[key], kind):
            problems.append("%s: key %r has type %s" % (
                where, key, type(payload[key]).__name__))
    return problems


def report_errors(report, schema=REPORT_SCHEMA):
    """Every way ``report`` departs from ``schema``, as messages.

        >>> report_errors({"schema_version": 1})[0]
        "report: missing key 'kind'"

    """
    if not isinstance(report, schema["type"]):
        return ["report is a %s, not an object" % type(report).__name__]
    problems = _check_fields(report, schema["required"], "report")
    if problems:
        return problems
    if report["schema_version"] != SCHEMA_VERSION:
        return ["report: schema_version %r, expected %d"
                % (report["schema_version"], SCHEMA_VERSION)]
    if report["kind"] not in schema["kinds"]:
        return ["report: unknown kind %r" % (report["kind"], )]
    return _check_fields(report["deterministic"],
                         schema["kinds"][report["kind"]], "deterministic")


def validate_report(report):
    problems = report_errors(report)
    if problems:
        raise FormatError("Invalid report:\n%s"
                          % indent("\n".join(problems), "  - "))
    return report


def json_payload(data):
    """The tree without its rendering-only ``sections``."""
    return collections.OrderedDict(
        (key, value) for key, value in data.items() if key != "sections")


def _json_default(value):
    if hasattr(value, "item"):
        return value.item()
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError("%r is not JSON serializable" % (value, ))


def dumps_json(data):
    return json.dumps(json_payload(data), sort_keys=True, indent=2,
                      default=_json_default) + "\n"


def write_json(path, data):
    validate_report(json_payload(data))
    file_put_contents(path, dumps_json(data))


def load_json(path):
    return json.loads(file_get_contents(path))


##
## Output Engines
##

@available_in_config
def text_py(data, opts={}):
    """Line delimited ``key: value`` text, one block per section."""

    if data["title"]:
        yield "%s\n%s\n\n" % (data["title"], "=" * len(data["title"]))

    for sec in data["sections"]:
        lines = ["%s:" % sec["label"]]
        lines += ["  %s: %s" % (row["key"], row["value"])
                  for row in sec["rows"]]
        yield "\n".join(lines) + "\n\n"

    if data["passed"] is not None:
        yield "result: %s\n" % ("PASS" if data["passed"] else "FAIL")


## formatter engines

if pystache:

    @available_in_config
    def mustache(template_name):
        """Return a callable that will render a report data tree

        returned callable must take 2 arguments ``data`` and ``opts``.

        """
        template_path = ensure_template_file_exists("mustache", template_name)

        template = file_get_contents(template_path)

        def renderer(data, opts):

            ## mustache cannot compute, so add the derived values
            data = dict(data)
            data["title_chars"] = list(data["title"]) if data["title"] else []
            data["has_result"] = data["passed"] is not None
            data["result"] = "PASS" if data["passed"] else "FAIL"

            return pystache.render(template, data)

        return renderer

else:

    @available_in_config
    def mustache(template_name):  ## pylint: disable=unused-argument
        die("Required 'pystache' python module not found.", errlvl=2)


if mako:

    import mako.template  ## pylint: disable=wrong-import-position

    mako_env = dict((f.__name__, f) for f in (indent, textwrap,
                                              format_value))

    @available_in_config
    def makotemplate(template_name):
        """Return a callable that will render a report data tree

        returned callable must take 2 arguments ``data`` and ``opts``.

        """
        template_path = ensure_template_file_exists("mako", template_name)

        template = mako.template.Template(filename=template_path)

        def renderer(data, opts):
            kwargs = mako_env.copy()
            kwargs.update({"data": data,
                           "opts": opts})
            return template.render(**kwargs)

        return renderer

else:

    @available_in_config
    def makotemplate(template_name):  ## pylint: disable=unused-argument
        die("Required 'mako' python module not found.", errlvl=2)


##
## Publish action
##

def safe_print(content):
    try:
        print(content, end='')
        sys.stdout.flush()
    except UnicodeEncodeError:
        if common.DEBUG:
            raise
        stderr(textwrap.dedent("""\
            UnicodeEncodeError:
              There was a problem outputing the report to your console
              in its current charset (%s).
            """) % sys.stdout.encoding)
        sys.exit(1)
    except IOError as e:
        if e.errno != errno.EPIPE:
            raise
        ## Nobody is listening anymore to stdout it seems. Let's bailout.
        try:
            sys.stdout.close()
        except BrokenPipeError:  ## expected outcome on linux
            pass
        sys.exit(0)


@available_in_config
def stdout(content):
    for chunk in content:
        safe_print(chunk)


@available_in_config
def FileOutput(filename):

    def _wrapped(content):
        file_put_contents(filename, "".join(content))

    return _wrapped


def render(data, output_engine=text_py, opts=None):
    content = output_engine(data, opts or {})
    if isinstance(content, str):
        content = content.splitlines(True)
    return content
