"""Sandboxed execution of parsed plan programs.

The interpreter walks the AST with a plain environment dict. Effectful
builtins are injected callables; the interpreter itself touches no files, no
network, and no process state, so a plan's observable behaviour is exactly
its trace. Numeric semantics are 64-bit floats throughout.

Budgets: every statement and expression evaluation costs one step
(default limit 10,000); every recorded builtin call costs one unit of the
builtin budget (default 64). ``emit`` terminates the program and is not
recorded as a builtin call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .parser import (
    Assign,
    BinOp,
    Bool,
    Call,
    Compare,
    ExprStmt,
    For,
    If,
    ListLit,
    MapLit,
    Name,
    NoneLit,
    Num,
    PlanProgram,
    Str,
    Subscript,
    UnaryOp,
)

DEFAULT_STEP_BUDGET = 10_000
DEFAULT_BUILTIN_BUDGET = 64


class PlanRuntimeError(Exception):
    """Execution failed; ``trace`` holds everything observed up to the error."""

    def __init__(self, kind: str, message: str, trace: "PlanTrace"):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.trace = trace


class _EmitSignal(Exception):
    pass


@dataclass(frozen=True)
class PageHandle:
    """A retrieved page as seen from inside a plan."""

    doc_id: str
    page_number: int
    title: str
    content: str

    @property
    def ref(self) -> tuple[str, int]:
        return (self.doc_id, self.page_number)


@dataclass
class PlanTrace:
    builtin_calls: list[tuple[str, str, str]] = field(default_factory=list)
    retrieved_pages: list[tuple[str, int]] = field(default_factory=list)
    selected_docs: list[str] = field(default_factory=list)
    chat_calls: int = 0
    emitted: Any = None
    completed: bool = False
    step_count: int = 0

    def record_page(self, ref: tuple[str, int]) -> None:
        if ref not in self.retrieved_pages:
            self.retrieved_pages.append(ref)

    def record_doc(self, doc_id: str) -> None:
        if doc_id not in self.selected_docs:
            self.selected_docs.append(doc_id)

    def to_json_dict(self) -> dict:
        return {
            "builtin_calls": [list(c) for c in self.builtin_calls],
            "retrieved_pages": [[d, p] for d, p in self.retrieved_pages],
            "selected_docs": list(self.selected_docs),
            "chat_calls": self.chat_calls,
            "emitted": digest_value(self.emitted) if self.completed else None,
            "completed": self.completed,
            "step_count": self.step_count,
        }


@dataclass
class ExecEnv:
    """Everything a plan execution may touch.

    ``select_fn``, ``retrieve_fn`` and ``extract_fn`` are the three injected
    helpers. ``retrieve_fn(question, documents_or_none)`` returns PageHandles;
    ``extract_fn(question, pages)`` returns ``(value, chat_calls_used)``.
    ``with_doc_select`` gates select_documents at runtime (the page-only
    system variant does not expose it).
    """

    select_fn: Optional[Callable] = None
    retrieve_fn: Optional[Callable] = None
    extract_fn: Optional[Callable] = None
    k: int = 4
    with_doc_select: bool = True
    step_budget: int = DEFAULT_STEP_BUDGET
    builtin_budget: int = DEFAULT_BUILTIN_BUDGET


def digest_value(value: Any, depth: int = 0) -> str:
    """Short deterministic rendering of a runtime value for the trace."""
    if isinstance(value, bool):
        return "True" if value else "False"
    if value is None:
        return "None"
    if isinstance(value, float):
        return _number_text(value)
    if isinstance(value, str):
        return value if len(value) <= 60 else value[:57] + "..."
    if isinstance(value, PageHandle):
        return f"<page {value.doc_id}#{value.page_number}>"
    if hasattr(value, "doc_id"):
        return f"<doc {value.doc_id}>"
    if isinstance(value, (list, tuple)):
        if depth >= 2:
            return f"<list n={len(value)}>"
        inner = ", ".join(digest_value(v, depth + 1) for v in list(value)[:6])
        suffix = ", ..." if len(value) > 6 else ""
        return f"[{inner}{suffix}]"
    if isinstance(value, dict):
        if depth >= 2:
            return f"<map n={len(value)}>"
        inner = ", ".join(
            f"{digest_value(k, depth + 1)}: {digest_value(v, depth + 1)}"
            for k, v in list(value.items())[:6]
        )
        suffix = ", ..." if len(value) > 6 else ""
        return f"{{{inner}{suffix}}}"
    return f"<{type(value).__name__}>"


def _number_text(value: float) -> str:
    if value != value or value in (float("inf"), float("-inf")):
        return repr(value)
    if float(value).is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(float(value))


class _Interpreter:
    def __init__(self, program: PlanProgram, env: ExecEnv):
        self.program = program
        self.env = env
        self.trace = PlanTrace()
        self.vars: dict[str, Any] = {}

    # -- bookkeeping --------------------------------------------------------

    def fail(self, kind: str, message: str) -> PlanRuntimeError:
        return PlanRuntimeError(kind, message, self.trace)

    def tick(self, n: int = 1) -> None:
        self.trace.step_count += n
        if self.trace.step_count > self.env.step_budget:
            raise self.fail(
                "step_budget_exceeded",
                f"execution exceeded {self.env.step_budget} steps",
            )

    def record_builtin(self, name: str, args: list, result: Any) -> None:
        self.trace.builtin_calls.append(
            (name, digest_value(list(args)), digest_value(result))
        )
        if len(self.trace.builtin_calls) > self.env.builtin_budget:
            raise self.fail(
                "builtin_budget_exceeded",
                f"execution exceeded {self.env.builtin_budget} builtin calls",
            )

    # -- execution ----------------------------------------------------------

    def run(self) -> PlanTrace:
        try:
            for stmt in self.program.statements:
                self.exec_stmt(stmt)
        except _EmitSignal:
            self.trace.completed = True
            return self.trace
        raise self.fail("no_answer", "plan completed without calling emit")

    def exec_stmt(self, stmt) -> None:
        self.tick()
        if isinstance(stmt, Assign):
            value = self.eval(stmt.value)
            self.assign(stmt.target, value)
        elif isinstance(stmt, ExprStmt):
            self.eval(stmt.expr)
        elif isinstance(stmt, For):
            self.exec_for(stmt)
        elif isinstance(stmt, If):
            self.exec_if(stmt)
        else:  # pragma: no cover - parser emits only the above
            raise self.fail("type_error", f"unknown statement {type(stmt).__name__}")

    def assign(self, target, value) -> None:
        if isinstance(target, Name):
            self.vars[target.ident] = value
            return
        container = self.eval(target.target)
        index = self.eval(target.index)
        if isinstance(container, dict):
            if isinstance(index, (str, float, bool)):
                container[index] = value
                return
            raise self.fail("type_error", "map keys must be strings or numbers")
        if isinstance(container, list):
            idx = self._list_index(container, index)
            container[idx] = value
            return
        raise self.fail("type_error", "subscript assignment needs a list or map")

    def _list_index(self, container, index) -> int:
        if not isinstance(index, float) or not index.is_integer():
            raise self.fail("type_error", "list index must be an integer")
        idx = int(index)
        if idx < 0:
            idx += len(container)
        if not 0 <= idx < len(container):
            raise self.fail("value_error", f"list index {int(index)} out of range")
        return idx

    def exec_for(self, stmt: For) -> None:
        iterable = self.eval(stmt.iterable)
        if not isinstance(iterable, (list, tuple)):
            raise self.fail("type_error", "for loop requires a list")
        for item in iterable:
            self.tick()
            if len(stmt.targets) == 1:
                self.vars[stmt.targets[0]] = item
            else:
                if not isinstance(item, (list, tuple)) or len(item) != len(stmt.targets):
                    raise self.fail(
                        "type_error",
                        f"cannot unpack {digest_value(item)} into "
                        f"{len(stmt.targets)} names",
                    )
                for name, sub in zip(stmt.targets, item):
                    self.vars[name] = sub
            for inner in stmt.body:
                self.exec_stmt(inner)

    def exec_if(self, stmt: If) -> None:
        for cond, body in stmt.branches:
            if cond is None or self.truthy(self.eval(cond)):
                for inner in body:
                    self.exec_stmt(inner)
                return

    def truthy(self, value) -> bool:
        if value is None:
            return False
        if isinstance(value, bool):
            return value
        if isinstance(value, float):
            return value != 0.0
        if isinstance(value, (str, list, tuple, dict)):
            return len(value) > 0
        return True

    # -- expressions ---------------------------------------------------------

    def eval(self, node) -> Any:
        self.tick()
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Bool):
            return node.value
        if isinstance(node, NoneLit):
            return None
        if isinstance(node, Str):
            return self.interpolate(node)
        if isinstance(node, Name):
            if node.ident not in self.vars:
                raise self.fail("undefined_name", f"name {node.ident!r} is not defined")
            return self.vars[node.ident]
        if isinstance(node, ListLit):
            return [self.eval(item) for item in node.items]
        if isinstance(node, MapLit):
            out: dict = {}
            for key_expr, value_expr in node.items:
                key = self.eval(key_expr)
                if not isinstance(key, (str, float, bool)):
                    raise self.fail("type_error", "map keys must be strings or numbers")
                out[key] = self.eval(value_expr)
            return out
        if isinstance(node, BinOp):
            return self.eval_binop(node)
        if isinstance(node, UnaryOp):
            operand = self.eval(node.operand)
            if not isinstance(operand, float) or isinstance(operand, bool):
                raise self.fail("type_error", "unary minus requires a number")
            return -operand
        if isinstance(node, Compare):
            return self.eval_compare(node)
        if isinstance(node, Subscript):
            return self.eval_subscript(node)
        if isinstance(node, Call):
            return self.eval_call(node)
        raise self.fail("type_error", f"unknown expression {type(node).__name__}")

    def interpolate(self, node: Str) -> str:
        chunks = []
        for kind, text in node.parts:
            if kind == "lit":
                chunks.append(text)
            else:
                if text not in self.vars:
                    raise self.fail(
                        "undefined_name",
                        f"string interpolation references undefined name {text!r}",
                    )
                chunks.append(self.to_text(self.vars[text]))
        return "".join(chunks)

    def to_text(self, value) -> str:
        if isinstance(value, str):
            return value
        return digest_value(value)

    def eval_binop(self, node: BinOp) -> Any:
        left = self.eval(node.left)
        right = self.eval(node.right)
        if node.op == "+":
            if self._is_number(left) and self._is_number(right):
                return float(left) + float(right)
            if isinstance(left, str) and isinstance(right, str):
                return left + right
            raise self.fail(
                "type_error",
                f"cannot add {digest_value(left)} and {digest_value(right)}",
            )
        if not (self._is_number(left) and self._is_number(right)):
            raise self.fail(
                "type_error",
                f"arithmetic requires numbers, got {digest_value(left)} "
                f"and {digest_value(right)}",
            )
        a, b = float(left), float(right)
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise self.fail("division_by_zero", "division by zero")
        return a / b

    @staticmethod
    def _is_number(value) -> bool:
        return isinstance(value, float) and not isinstance(value, bool)

    def eval_compare(self, node: Compare) -> bool:
        left = self.eval(node.left)
        right = self.eval(node.right)
        if node.op == "==":
            return left == right
        if node.op == "!=":
            return left != right
        ok = (self._is_number(left) and self._is_number(right)) or (
            isinstance(left, str) and isinstance(right, str)
        )
        if not ok:
            raise self.fail(
                "type_error",
                f"cannot order {digest_value(left)} and {digest_value(right)}",
            )
        if node.op == "<":
            return left < right
        if node.op == "<=":
            return left <= right
        if node.op == ">":
            return left > right
        return left >= right

    def eval_subscript(self, node: Subscript) -> Any:
        container = self.eval(node.target)
        index = self.eval(node.index)
        if isinstance(container, dict):
            if index not in container:
                raise self.fail("value_error", f"map has no key {digest_value(index)}")
            return container[index]
        if isinstance(container, (list, tuple)):
            return container[self._list_index(list(container), index)]
        raise self.fail("type_error", "subscript needs a list or map")

    # -- builtins -------------------------------------------------------------

    def eval_call(self, node: Call) -> Any:
        args = [self.eval(a) for a in node.args]
        kwargs = {name: self.eval(expr) for name, expr in node.kwargs}
        name = node.name

        if name == "emit":
            if len(args) != 1 or kwargs:
                raise self.fail("type_error", "emit takes exactly one argument")
            self.trace.emitted = args[0]
            raise _EmitSignal()

        result = self.call_builtin(name, args, kwargs)
        self.record_builtin(name, args if not kwargs else args + [kwargs], result)
        return result

    def call_builtin(self, name: str, args: list, kwargs: dict) -> Any:
        if name == "select_documents":
            if not self.env.with_doc_select:
                raise self.fail(
                    "builtin_unavailable",
                    "select_documents is not available to this system",
                )
            if self.env.select_fn is None:
                raise self.fail("builtin_unavailable", "select_documents not injected")
            try:
                docs = self.env.select_fn(*args, **kwargs)
            except PlanRuntimeError:
                raise
            except Exception as exc:
                raise self.fail("value_error", f"select_documents failed: {exc}")
            for doc in docs:
                self.trace.record_doc(doc.doc_id)
            return list(docs)

        if name == "retrieve_relevant_pages":
            if self.env.retrieve_fn is None:
                raise self.fail("builtin_unavailable", "retrieve_relevant_pages not injected")
            question = args[0] if args else kwargs.get("question")
            documents = args[1] if len(args) > 1 else kwargs.get("documents")
            if not isinstance(question, str):
                raise self.fail("type_error", "retrieve_relevant_pages needs a question string")
            try:
                pages = self.env.retrieve_fn(question, documents)
            except PlanRuntimeError:
                raise
            except Exception as exc:
                raise self.fail("value_error", f"retrieve_relevant_pages failed: {exc}")
            for page in pages:
                self.trace.record_page(page.ref)
            return list(pages)

        if name == "extract_value":
            if self.env.extract_fn is None:
                raise self.fail("builtin_unavailable", "extract_value not injected")
            question = args[0] if args else kwargs.get("question")
            pages = args[1] if len(args) > 1 else kwargs.get("pages")
            if not isinstance(question, str) or not isinstance(pages, list):
                raise self.fail("type_error", "extract_value needs (question, pages)")
            try:
                value, chat_calls = self.env.extract_fn(question, pages)
            except PlanRuntimeError:
                raise
            except Exception as exc:
                self.trace.chat_calls += getattr(exc, "chat_calls_used", 0)
                raise self.fail("extraction_failed", str(exc))
            self.trace.chat_calls += chat_calls
            return value

        return self.pure_builtin(name, args, kwargs)

    def pure_builtin(self, name: str, args: list, kwargs: dict) -> Any:
        if kwargs:
            raise self.fail("type_error", f"{name} takes no keyword arguments")

        if name in ("min", "max"):
            pick = min if name == "min" else max
            values = args[0] if len(args) == 1 and isinstance(args[0], (list, tuple)) else args
            if not values:
                raise self.fail("value_error", f"{name} of empty sequence")
            if not all(self._is_number(v) for v in values):
                raise self.fail("type_error", f"{name} requires numbers")
            return float(pick(values))

        if name == "sum":
            if len(args) != 1 or not isinstance(args[0], (list, tuple)):
                raise self.fail("type_error", "sum takes a list")
            if not all(self._is_number(v) for v in args[0]):
                raise self.fail("type_error", "sum requires numbers")
            return float(sum(args[0]))

        if name == "abs":
            if len(args) != 1 or not self._is_number(args[0]):
                raise self.fail("type_error", "abs requires a number")
            return abs(args[0])

        if name == "len":
            if len(args) != 1 or not isinstance(args[0], (str, list, tuple, dict)):
                raise self.fail("type_error", "len requires a string, list, or map")
            return float(len(args[0]))

        if name == "range":
            return self.builtin_range(args)

        if name == "zip":
            if not args or not all(isinstance(a, (list, tuple)) for a in args):
                raise self.fail("type_error", "zip requires lists")
            return [tuple(group) for group in zip(*args)]

        if name == "float":
            if len(args) != 1:
                raise self.fail("type_error", "float takes one argument")
            value = args[0]
            if self._is_number(value):
                return float(value)
            if isinstance(value, str):
                try:
                    return float(value.replace(",", ""))
                except ValueError:
                    raise self.fail(
                        "value_error", f"cannot convert {value!r} to a number"
                    )
            raise self.fail("type_error", f"cannot convert {digest_value(value)} to float")

        if name == "str":
            if len(args) != 1:
                raise self.fail("type_error", "str takes one argument")
            return self.to_text(args[0])

        if name in ("argmin", "argmax"):
            if len(args) != 1 or not isinstance(args[0], dict):
                raise self.fail("type_error", f"{name} requires a map")
            mapping = args[0]
            if not mapping:
                raise self.fail("value_error", f"{name} of empty map")
            if not all(self._is_number(v) for v in mapping.values()):
                raise self.fail("type_error", f"{name} requires numeric map values")
            best = (min if name == "argmin" else max)(mapping.values())
            winners = [k for k, v in mapping.items() if v == best]
            try:
                return min(winners)
            except TypeError:
                raise self.fail("type_error", f"{name} keys are not comparable")

        if name == "append":
            if len(args) != 2 or not isinstance(args[0], list):
                raise self.fail("type_error", "append takes (list, value)")
            args[0].append(args[1])
            return args[0]

        raise self.fail("type_error", f"unknown builtin {name!r}")  # pragma: no cover

    def builtin_range(self, args: list) -> list:
        if not 1 <= len(args) <= 3:
            raise self.fail("type_error", "range takes 1 to 3 arguments")
        for a in args:
            if not self._is_number(a) or not float(a).is_integer():
                raise self.fail("type_error", "range requires integer arguments")
        ints = [int(a) for a in args]
        if len(ints) == 1:
            start, stop, step = 0, ints[0], 1
        elif len(ints) == 2:
            start, stop, step = ints[0], ints[1], 1
        else:
            start, stop, step = ints
        if step == 0:
            raise self.fail("value_error", "range step must not be zero")
        length = max(0, (stop - start + (step - (1 if step > 0 else -1))) // step)
        if length > self.env.step_budget:
            raise self.fail(
                "step_budget_exceeded",
                f"range of length {length} exceeds the step budget",
            )
        self.tick(int(length))
        return [float(v) for v in range(start, stop, step)]


def execute_plan(program: PlanProgram, env: ExecEnv) -> PlanTrace:
    """Run a parsed plan; returns the trace of a completed (emitted) run.

    Raises PlanRuntimeError on budget exhaustion, runtime type errors,
    extraction failures, or completion without emit. The partial trace is
    attached to the error.
    """
    if env.step_budget <= 0 or env.builtin_budget <= 0:
        raise ValueError("budgets must be positive")
    return _Interpreter(program, env).run()
