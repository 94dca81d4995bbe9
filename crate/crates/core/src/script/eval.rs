use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::ast::*;
use super::ScriptError;
use crate::wire::{Bank, RegisterFile};

/// Statements one invocation may execute before it is aborted.
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

const MAX_CALL_DEPTH: usize = 200;

/// Builtins every controller environment provides; extras may not shadow them.
pub const CORE_BUILTINS: &[&str] = &[
    "read_input_integer_register",
    "read_input_float_register",
    "write_output_integer_register",
    "write_output_float_register",
    "sleep",
    "textmsg",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    None,
    Number(f64),
    Bool(bool),
    Str(String),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::None => "none",
            Value::Number(_) => "number",
            Value::Bool(_) => "boolean",
            Value::Str(_) => "string",
        }
    }

    pub fn as_number(&self) -> Result<f64, String> {
        match self {
            Value::Number(v) => Ok(*v),
            other => Err(format!("expected number, got {}", other.type_name())),
        }
    }

    /// The value as an integer; non-integral numbers are rejected.
    pub fn as_integer(&self) -> Result<i64, String> {
        let v = self.as_number()?;
        if v.fract() != 0.0 || !v.is_finite() || v.abs() > i64::MAX as f64 {
            return Err(format!("expected integer value, got {v}"));
        }
        Ok(v as i64)
    }

    fn as_bool(&self) -> Result<bool, String> {
        match self {
            Value::Bool(b) => Ok(*b),
            other => Err(format!("expected boolean, got {}", other.type_name())),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::None => f.write_str("None"),
            Value::Number(v) => write!(f, "{v}"),
            Value::Bool(b) => f.write_str(if *b { "True" } else { "False" }),
            Value::Str(s) => f.write_str(s),
        }
    }
}

/// Services the interpreter needs from whoever runs it.
pub trait ScriptHost {
    /// Blocks for `seconds` of (simulated) time.
    fn sleep(&mut self, seconds: f64) -> Result<(), String>;
    fn log(&mut self, message: &str);
}

/// Host that records log lines and accumulated sleep time without blocking.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct CollectingHost {
    pub messages: Vec<String>,
    pub slept: f64,
}

impl ScriptHost for CollectingHost {
    fn sleep(&mut self, seconds: f64) -> Result<(), String> {
        self.slept += seconds;
        Ok(())
    }

    fn log(&mut self, message: &str) {
        self.messages.push(message.to_string());
    }
}

type HostFn = dyn Fn(&mut dyn ScriptHost, &[Value]) -> Result<Value, String> + Send + Sync;

/// A host function callable from scripts.
#[derive(Clone)]
pub struct Builtin {
    pub arity: usize,
    func: Arc<HostFn>,
}

impl Builtin {
    pub fn new(
        arity: usize,
        func: impl Fn(&mut dyn ScriptHost, &[Value]) -> Result<Value, String> + Send + Sync + 'static,
    ) -> Self {
        Builtin {
            arity,
            func: Arc::new(func),
        }
    }

    pub fn call(&self, host: &mut dyn ScriptHost, args: &[Value]) -> Result<Value, String> {
        (self.func)(host, args)
    }
}

impl fmt::Debug for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Builtin(arity {})", self.arity)
    }
}

#[derive(Debug)]
struct FuncDef {
    params: Vec<String>,
    body: Vec<Stmt>,
}

/// Global variables, script functions and host builtins.
#[derive(Debug, Clone)]
pub struct Env {
    globals: HashMap<String, Value>,
    functions: HashMap<String, Arc<FuncDef>>,
    builtins: HashMap<String, Builtin>,
    pub step_budget: u64,
}

impl Default for Env {
    fn default() -> Self {
        Env::new()
    }
}

fn register_index(v: &Value) -> Result<usize, String> {
    let i = v.as_integer()?;
    usize::try_from(i).map_err(|_| format!("register index out of range: {i}"))
}

impl Env {
    /// An environment without any builtins.
    pub fn new() -> Self {
        Env {
            globals: HashMap::new(),
            functions: HashMap::new(),
            builtins: HashMap::new(),
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    /// Installs the register, `sleep` and `textmsg` builtins plus `extras`.
    pub fn register_builtins(
        &mut self,
        registers: Arc<RegisterFile>,
        extras: impl IntoIterator<Item = (String, Builtin)>,
    ) -> Result<(), ScriptError> {
        let extras: Vec<_> = extras.into_iter().collect();
        if let Some((name, _)) = extras.iter().find(|(n, _)| CORE_BUILTINS.contains(&n.as_str())) {
            return Err(ScriptError::Builtin(format!("'{name}' collides with a core builtin")));
        }
        let read = |bank: Bank, regs: Arc<RegisterFile>| {
            Builtin::new(1, move |_, args| {
                let i = register_index(&args[0])?;
                let v = regs.get(bank, i).map_err(|e| e.to_string())?;
                Ok(Value::Number(v.as_f64()))
            })
        };
        self.builtins.insert(
            "read_input_integer_register".into(),
            read(Bank::InputInt, registers.clone()),
        );
        self.builtins.insert(
            "read_input_float_register".into(),
            read(Bank::InputFloat, registers.clone()),
        );
        let regs = registers.clone();
        self.builtins.insert(
            "write_output_integer_register".into(),
            Builtin::new(2, move |_, args| {
                let i = register_index(&args[0])?;
                let v = args[1].as_integer()?;
                let v = i32::try_from(v).map_err(|_| format!("value {v} does not fit an integer register"))?;
                regs.set_int(Bank::OutputInt, i, v).map_err(|e| e.to_string())?;
                Ok(Value::None)
            }),
        );
        let regs = registers;
        self.builtins.insert(
            "write_output_float_register".into(),
            Builtin::new(2, move |_, args| {
                let i = register_index(&args[0])?;
                let v = args[1].as_number()?;
                regs.set_float(Bank::OutputFloat, i, v).map_err(|e| e.to_string())?;
                Ok(Value::None)
            }),
        );
        self.builtins.insert(
            "sleep".into(),
            Builtin::new(1, |host, args| {
                let s = args[0].as_number()?;
                if !(s >= 0.0) {
                    return Err(format!("sleep duration must be non-negative, got {s}"));
                }
                host.sleep(s)?;
                Ok(Value::None)
            }),
        );
        self.builtins.insert(
            "textmsg".into(),
            Builtin::new(1, |host, args| {
                host.log(&args[0].to_string());
                Ok(Value::None)
            }),
        );
        for (name, b) in extras {
            self.builtins.insert(name, b);
        }
        Ok(())
    }

    /// Adds or replaces one builtin.
    pub fn insert_builtin(&mut self, name: impl Into<String>, builtin: Builtin) {
        self.builtins.insert(name.into(), builtin);
    }

    pub fn builtin_names(&self) -> impl Iterator<Item = &str> {
        self.builtins.keys().map(|s| s.as_str())
    }

    pub fn global(&self, name: &str) -> Option<&Value> {
        self.globals.get(name)
    }

    pub fn set_global(&mut self, name: impl Into<String>, value: Value) {
        self.globals.insert(name.into(), value);
    }

    pub fn has_function(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    /// Calls a script function defined by an earlier [`evaluate`].
    pub fn call(&mut self, name: &str, args: &[Value], host: &mut dyn ScriptHost) -> Result<Value, ScriptError> {
        let mut exec = Exec {
            env: self,
            host,
            steps: 0,
            depth: 0,
        };
        exec.call(name, args.to_vec(), 0)
    }
}

/// Runs a program: defines its functions, then executes its top-level statements.
///
/// Returns the value of a top-level `return`, or [`Value::None`].
pub fn evaluate(program: &Program, env: &mut Env, host: &mut dyn ScriptHost) -> Result<Value, ScriptError> {
    for stmt in &program.body {
        if let StmtKind::FuncDef { name, params, body } = &stmt.kind {
            if env.builtins.contains_key(name) {
                return Err(ScriptError::runtime(stmt.line, format!("cannot redefine builtin '{name}'")));
            }
            env.functions.insert(
                name.clone(),
                Arc::new(FuncDef {
                    params: params.clone(),
                    body: body.clone(),
                }),
            );
        }
    }
    let mut exec = Exec {
        env,
        host,
        steps: 0,
        depth: 0,
    };
    match exec.block(&program.body, &mut None)? {
        Flow::Return(v) => Ok(v),
        Flow::Normal => Ok(Value::None),
    }
}

enum Flow {
    Normal,
    Return(Value),
}

type Locals = Option<HashMap<String, Value>>;

struct Exec<'a> {
    env: &'a mut Env,
    host: &'a mut dyn ScriptHost,
    steps: u64,
    depth: usize,
}

impl Exec<'_> {
    fn block(&mut self, body: &[Stmt], locals: &mut Locals) -> Result<Flow, ScriptError> {
        for stmt in body {
            if let Flow::Return(v) = self.stmt(stmt, locals)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn tick(&mut self, line: usize) -> Result<(), ScriptError> {
        self.steps += 1;
        if self.steps > self.env.step_budget {
            return Err(ScriptError::runtime(line, "step budget exceeded"));
        }
        Ok(())
    }

    fn condition(&mut self, e: &Expr, locals: &mut Locals) -> Result<bool, ScriptError> {
        self.expr(e, locals)?
            .as_bool()
            .map_err(|m| ScriptError::runtime(e.line, format!("condition: {m}")))
    }

    fn stmt(&mut self, stmt: &Stmt, locals: &mut Locals) -> Result<Flow, ScriptError> {
        let line = stmt.line;
        match &stmt.kind {
            // Hoisted by `evaluate`.
            StmtKind::FuncDef { .. } => {}
            StmtKind::Assign { target, value } => {
                self.tick(line)?;
                let Target::Var(name) = target else {
                    return Err(ScriptError::runtime(line, "lists are not supported"));
                };
                let v = self.expr(value, locals)?;
                match locals {
                    Some(l) => l.insert(name.clone(), v),
                    None => self.env.globals.insert(name.clone(), v),
                };
            }
            StmtKind::Expr(e) => {
                self.tick(line)?;
                self.expr(e, locals)?;
            }
            StmtKind::If { arms, else_body } => {
                self.tick(line)?;
                for (cond, body) in arms {
                    if self.condition(cond, locals)? {
                        return self.block(body, locals);
                    }
                }
                if let Some(body) = else_body {
                    return self.block(body, locals);
                }
            }
            StmtKind::While { cond, body } => loop {
                self.tick(line)?;
                if !self.condition(cond, locals)? {
                    break;
                }
                if let Flow::Return(v) = self.block(body, locals)? {
                    return Ok(Flow::Return(v));
                }
            },
            StmtKind::Return(value) => {
                self.tick(line)?;
                let v = match value {
                    Some(e) => self.expr(e, locals)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn call(&mut self, name: &str, args: Vec<Value>, line: usize) -> Result<Value, ScriptError> {
        let arity_error = |want: usize| {
            ScriptError::runtime(
                line,
                format!("{name} expects {want} argument{}, got {}", if want == 1 { "" } else { "s" }, args.len()),
            )
        };
        if let Some(f) = self.env.functions.get(name).cloned() {
            if f.params.len() != args.len() {
                return Err(arity_error(f.params.len()));
            }
            if self.depth >= MAX_CALL_DEPTH {
                return Err(ScriptError::runtime(line, "call depth exceeded"));
            }
            let mut locals = Some(f.params.iter().cloned().zip(args).collect());
            self.depth += 1;
            let flow = self.block(&f.body, &mut locals);
            self.depth -= 1;
            return Ok(match flow? {
                Flow::Return(v) => v,
                Flow::Normal => Value::None,
            });
        }
        if let Some(b) = self.env.builtins.get(name).cloned() {
            if b.arity != args.len() {
                return Err(arity_error(b.arity));
            }
            return b.call(self.host, &args).map_err(|m| ScriptError::runtime(line, m));
        }
        Err(ScriptError::runtime(line, format!("unknown identifier '{name}'")))
    }

    fn expr(&mut self, e: &Expr, locals: &mut Locals) -> Result<Value, ScriptError> {
        let line = e.line;
        let err = |m: String| ScriptError::runtime(line, m);
        Ok(match &e.kind {
            ExprKind::Number(v) => Value::Number(*v),
            ExprKind::Str(s) => Value::Str(s.clone()),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Var(name) => locals
                .as_ref()
                .and_then(|l| l.get(name))
                .or_else(|| self.env.globals.get(name))
                .cloned()
                .ok_or_else(|| err(format!("unknown identifier '{name}'")))?,
            ExprKind::Call { name, args } => {
                let mut values = Vec::with_capacity(args.len());
                for a in args {
                    if a.name.is_some() {
                        return Err(err("keyword arguments are not supported".into()));
                    }
                    values.push(self.expr(&a.value, locals)?);
                }
                self.call(name, values, line)?
            }
            ExprKind::List(_) | ExprKind::Index { .. } => return Err(err("lists are not supported".into())),
            ExprKind::Unary { op, operand } => {
                let v = self.expr(operand, locals)?;
                match op {
                    UnaryOp::Neg => Value::Number(-v.as_number().map_err(|m| err(format!("'-': {m}")))?),
                    UnaryOp::Not => Value::Bool(!v.as_bool().map_err(|m| err(format!("'not': {m}")))?),
                }
            }
            ExprKind::Binary { op: op @ (BinOp::And | BinOp::Or), lhs, rhs } => {
                let sym = op.symbol();
                let l = self.expr(lhs, locals)?.as_bool().map_err(|m| err(format!("'{sym}': {m}")))?;
                if (*op == BinOp::And) != l {
                    return Ok(Value::Bool(l));
                }
                Value::Bool(self.expr(rhs, locals)?.as_bool().map_err(|m| err(format!("'{sym}': {m}")))?)
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.expr(lhs, locals)?;
                let r = self.expr(rhs, locals)?;
                binary(*op, &l, &r).map_err(err)?
            }
        })
    }
}

fn binary(op: BinOp, l: &Value, r: &Value) -> Result<Value, String> {
    match op {
        BinOp::Eq => return Ok(Value::Bool(l == r)),
        BinOp::Ne => return Ok(Value::Bool(l != r)),
        _ => {}
    }
    let (a, b) = match (l, r) {
        (Value::Number(a), Value::Number(b)) => (*a, *b),
        _ => {
            return Err(format!(
                "type error: '{}' on {} and {}",
                op.symbol(),
                l.type_name(),
                r.type_name()
            ))
        }
    };
    Ok(match op {
        BinOp::Add => Value::Number(a + b),
        BinOp::Sub => Value::Number(a - b),
        BinOp::Mul => Value::Number(a * b),
        BinOp::Div | BinOp::Mod if b == 0.0 => return Err("division by zero".into()),
        BinOp::Div => Value::Number(a / b),
        BinOp::Mod => Value::Number(a % b),
        BinOp::Lt => Value::Bool(a < b),
        BinOp::Le => Value::Bool(a <= b),
        BinOp::Gt => Value::Bool(a > b),
        BinOp::Ge => Value::Bool(a >= b),
        BinOp::Eq | BinOp::Ne | BinOp::And | BinOp::Or => unreachable!("handled above"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::compile;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn run(src: &str) -> Result<(Env, CollectingHost), ScriptError> {
        let mut env = Env::new();
        env.register_builtins(Arc::new(RegisterFile::new()), [])?;
        let mut host = CollectingHost::default();
        evaluate(&compile(src)?, &mut env, &mut host)?;
        Ok((env, host))
    }

    #[test]
    fn arithmetic_precedence() {
        let (env, _) = run("x = 1 + 2 * 3").unwrap();
        assert_eq!(env.global("x"), Some(&Value::Number(7.0)));
    }

    #[test]
    fn register_echo() {
        let regs = Arc::new(RegisterFile::new());
        regs.set_int(Bank::InputInt, 19, 40).unwrap();
        let mut env = Env::new();
        env.register_builtins(regs.clone(), []).unwrap();
        let p = compile("write_output_integer_register(19, read_input_integer_register(19))").unwrap();
        evaluate(&p, &mut env, &mut CollectingHost::default()).unwrap();
        assert_eq!(regs.get_int(Bank::OutputInt, 19).unwrap(), 40);
    }

    #[test]
    fn step_budget() {
        let err = run("x = 0\nwhile True:\n  x = x + 1\nend").unwrap_err();
        assert!(err.to_string().contains("step budget exceeded"), "{err}");
        assert!(err.line() == 2 || err.line() == 3);
    }

    #[test]
    fn register_out_of_range() {
        let err = run("x = read_input_integer_register(24)").unwrap_err();
        assert_eq!(err.line(), 1);
        assert!(err.to_string().contains("register index out of range"), "{err}");
    }

    #[test]
    fn textmsg_logs() {
        let (_, host) = run("textmsg(\"hi\")").unwrap();
        assert_eq!(host.messages, vec!["hi"]);
    }

    #[test]
    fn sleep_goes_through_host() {
        let (_, host) = run("sleep(0.25)\nsleep(0.5)").unwrap();
        assert_eq!(host.slept, 0.75);
    }

    #[test]
    fn extras_are_callable_and_cannot_shadow_core() {
        let regs = Arc::new(RegisterFile::new());
        let mut env = Env::new();
        let clamp = Builtin::new(1, |_, a| Ok(Value::Number(a[0].as_number()?.clamp(0.0, 100.0))));
        env.register_builtins(regs.clone(), [("sg_grip".to_string(), clamp.clone())])
            .unwrap();
        let p = compile("w = sg_grip(140)").unwrap();
        evaluate(&p, &mut env, &mut CollectingHost::default()).unwrap();
        assert_eq!(env.global("w"), Some(&Value::Number(100.0)));
        let err = Env::new()
            .register_builtins(regs, [("textmsg".to_string(), clamp)])
            .unwrap_err();
        assert!(err.to_string().contains("collides"));
    }

    #[test]
    fn functions_and_scopes() {
        let src = "\
def clamp(v, lo, hi):
  if v < lo:
    return lo
  elif v > hi:
    return hi
  end
  return v
end
a = clamp(140, 0, 100)
b = clamp(-3, 0, 100)
c = clamp(42, 0, 100)
";
        let (env, _) = run(src).unwrap();
        assert_eq!(env.global("a"), Some(&Value::Number(100.0)));
        assert_eq!(env.global("b"), Some(&Value::Number(0.0)));
        assert_eq!(env.global("c"), Some(&Value::Number(42.0)));
        assert_eq!(env.global("v"), None);
    }

    #[test]
    fn short_circuit() {
        let (env, _) = run("x = False and undefined_thing\ny = True or undefined_thing").unwrap();
        assert_eq!(env.global("x"), Some(&Value::Bool(false)));
        assert_eq!(env.global("y"), Some(&Value::Bool(true)));
    }

    #[test]
    fn runtime_errors_carry_lines() {
        let cases = [
            ("x = 1\ny = 1 / 0", 2, "division by zero"),
            ("x = 1\n\nz = nope", 3, "unknown identifier 'nope'"),
            ("def f(a):\n  return a\nend\nx = f(1, 2)", 4, "f expects 1 argument, got 2"),
            ("x = \"a\" + 1", 1, "type error"),
            ("if 1:\nend", 1, "expected boolean"),
            ("x = [1, 2]", 1, "lists are not supported"),
            ("stopj(a=5.0)", 1, "keyword arguments are not supported"),
            ("write_output_integer_register(19, 2.5)", 1, "expected integer value"),
            ("def textmsg(s):\nend", 1, "cannot redefine builtin"),
        ];
        for (src, line, msg) in cases {
            let err = run(src).unwrap_err();
            assert_eq!(err.line(), line, "{src}: {err}");
            assert!(err.to_string().contains(msg), "{src}: {err}");
        }
    }

    #[test]
    fn call_defined_function_later() {
        let regs = Arc::new(RegisterFile::new());
        let mut env = Env::new();
        env.register_builtins(regs.clone(), []).unwrap();
        let p = compile("def ext_256():\n  write_output_float_register(19, 2.5)\nend").unwrap();
        let mut host = CollectingHost::default();
        evaluate(&p, &mut env, &mut host).unwrap();
        assert_eq!(regs.get_float(Bank::OutputFloat, 19).unwrap(), 0.0);
        env.call("ext_256", &[], &mut host).unwrap();
        assert_eq!(regs.get_float(Bank::OutputFloat, 19).unwrap(), 2.5);
    }

    #[test]
    fn host_state_only_via_builtins() {
        let calls = Arc::new(AtomicUsize::new(0));
        let mut env = Env::new();
        let c = calls.clone();
        env.insert_builtin(
            "poke",
            Builtin::new(0, move |_, _| {
                c.fetch_add(1, Ordering::SeqCst);
                Ok(Value::None)
            }),
        );
        let p = compile("i = 0\nwhile i < 3:\n  poke()\n  i = i + 1\nend").unwrap();
        evaluate(&p, &mut env, &mut CollectingHost::default()).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn deep_recursion_is_bounded() {
        let err = run("def f(n):\n  return f(n + 1)\nend\nf(0)").unwrap_err();
        assert!(err.to_string().contains("call depth exceeded"), "{err}");
    }
}
