import json

import numpy as np
import pytest

from pmiv.ast_ingest import build_ast_document, file_document_from_obj, parse_file_document

# Excerpt of a decompiler dump: nodes 62 and 63 live outside the excerpt.
EXAMPLE1_SNIPPET = """{"file_id": "snippet", "functions": [{"name": "Page_Load", "nodes": {
  "30": {"type": "LocalVar", "name": "variable7"},
  "28": {"type": "LocalVar", "name": "locals[0]"},
  "29": {"type": "CLRVariableWithInitializer", "varType": "System.Web.UI",
         "name": "variable8", "value": "28"},
  "64": {"fnName": "AddParsedSubObject", "type": "Call", "target": "62",
         "arguments": ["63"]}
}}]}"""

# if foo() { bar(); } else { baz(); } bla();
IF_ELSE_NODES = {
    "1": {"type": "If", "condition": "2", "then": ["3"], "else": ["4"]},
    "2": {"type": "Call", "fnName": "foo", "arguments": []},
    "3": {"type": "Call", "fnName": "bar", "arguments": []},
    "4": {"type": "Call", "fnName": "baz", "arguments": []},
    "5": {"type": "Call", "fnName": "bla", "arguments": []},
}
IF_ELSE_ENTRY = ["1", "5"]

# class Hello { static void Main() { Console.WriteLine("Hello, World!"); } }
HELLO_WORLD = {
    "file_id": "hello-world",
    "functions": [
        {"name": "Main", "entry": ["3", "4"], "nodes": {
            "1": {"type": "ClassRef", "name": "System.Console"},
            "2": {"type": "CLRLiteral", "value": "Hello, World!"},
            "3": {"type": "Call", "fnName": "System.Console.WriteLine", "target": "1",
                  "arguments": ["2"]},
            "4": {"type": "Return"},
        }},
        {"name": ".ctor", "entry": ["2", "3"], "nodes": {
            "1": {"type": "LocalVar", "name": "this"},
            "2": {"type": "CtorCall", "ctorType": "System.Object", "target": "1",
                  "arguments": []},
            "3": {"type": "Return"},
        }},
    ],
}


@pytest.fixture
def example1_doc():
    return parse_file_document(EXAMPLE1_SNIPPET, strict=False)


@pytest.fixture
def if_else_ast():
    return build_ast_document("example", IF_ELSE_NODES, IF_ELSE_ENTRY)


@pytest.fixture
def hello_doc():
    return file_document_from_obj(json.loads(json.dumps(HELLO_WORLD)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
