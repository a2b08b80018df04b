//! Python module `streamcoord`: records and type patterns, networks built
//! from Python boxes, and the tiled Cholesky drivers with the benchmark
//! harness.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use streamcoord::barrier::run_barrier;
use streamcoord::bench::{self, BenchConfig, Impl};
use streamcoord::cholesky::{self, assemble, decompose, serial_tiled_cholesky, DenseMatrix, TaskCounts};
use streamcoord::cnc::{run_cnc, CncConfig};
use streamcoord::combinators::{self as comb, compile, NetworkExpr};
use streamcoord::dataflow::run_dataflow;
use streamcoord::runtime::{self, RunConfig};
use streamcoord::{BoxError, BoxSignature, TypePattern};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serialized value handed to `json.loads`.
fn to_py_json<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A field value owned by Python.
struct PyField(Py<PyAny>);

#[pyclass(name = "Record", module = "streamcoord", skip_from_py_object)]
#[derive(Clone)]
struct PyRecord(streamcoord::Record);

#[pymethods]
impl PyRecord {
    #[new]
    #[pyo3(signature = (fields=None, tags=None))]
    fn new(fields: Option<&Bound<'_, PyDict>>, tags: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut r = streamcoord::Record::new();
        if let Some(fields) = fields {
            for (k, v) in fields.iter() {
                r.insert_field(k.extract::<String>()?, PyField(v.unbind())).map_err(value_err)?;
            }
        }
        if let Some(tags) = tags {
            for (k, v) in tags.iter() {
                r.insert_tag(k.extract::<String>()?, v.extract::<i64>()?).map_err(value_err)?;
            }
        }
        Ok(Self(r))
    }

    #[getter]
    fn tags<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in self.0.tags() {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    #[getter]
    fn field_names(&self) -> Vec<String> {
        self.0.field_names().map(str::to_owned).collect()
    }

    fn tag(&self, name: &str) -> PyResult<i64> {
        self.0.tag(name).ok_or_else(|| PyKeyError::new_err(name.to_owned()))
    }

    /// The Python object stored under `name`. Fields set by Rust kernels
    /// are opaque and raise `TypeError`.
    fn field(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        if !self.0.has_field(name) {
            return Err(PyKeyError::new_err(name.to_owned()));
        }
        match self.0.field::<PyField>(name) {
            Some(PyField(obj)) => Ok(obj.clone_ref(py)),
            None => Err(PyTypeError::new_err(format!("field {name} does not hold a Python object"))),
        }
    }

    fn with_tag(&self, name: String, value: i64) -> Self {
        Self(self.0.clone().with_tag(name, value))
    }

    fn with_field(&self, name: String, value: Py<PyAny>) -> Self {
        Self(self.0.clone().with_field(name, PyField(value)))
    }

    fn type_pattern(&self) -> PyTypePattern {
        PyTypePattern(self.0.type_pattern())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Record({:?})", self.0)
    }
}

#[pyclass(name = "TypePattern", module = "streamcoord", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTypePattern(TypePattern);

#[pymethods]
impl PyTypePattern {
    /// Parses `"{A,B,<k>}"`.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        TypePattern::parse(text).map(Self).map_err(value_err)
    }

    fn matches(&self, record: PyRef<'_, PyRecord>) -> bool {
        streamcoord::matches(&record.0, &self.0)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("TypePattern({:?})", self.0.to_string())
    }
}

fn patterns(list: &[PyRef<'_, PyTypePattern>]) -> Vec<TypePattern> {
    list.iter().map(|p| p.0.clone()).collect()
}

/// Index of the most specific matching pattern (ties go to the lowest
/// index), or `None`.
#[pyfunction]
fn best_match(record: PyRef<'_, PyRecord>, patterns: Vec<PyRef<'_, PyTypePattern>>) -> Option<usize> {
    streamcoord::best_match(&record.0, patterns.iter().map(|p| &p.0))
}

/// Union of two records; on a name clash the value of `earlier` wins.
#[pyfunction]
fn merge(earlier: PyRef<'_, PyRecord>, later: PyRef<'_, PyRecord>) -> PyRecord {
    PyRecord(streamcoord::merge_records(earlier.0.clone(), later.0.clone()))
}

/// A network expression. Combine with `>>` (serial) and `|` (parallel).
#[pyclass(name = "Net", module = "streamcoord", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNet(NetworkExpr);

fn kernel_output(out: &Bound<'_, PyAny>) -> Result<Vec<streamcoord::Record>, BoxError> {
    if out.is_none() {
        return Ok(Vec::new());
    }
    if let Ok(r) = out.cast::<PyRecord>() {
        return Ok(vec![r.borrow().0.clone()]);
    }
    let mut v = Vec::new();
    for item in out.try_iter().map_err(|e| BoxError::new(e.to_string()))? {
        let item = item.map_err(|e| BoxError::new(e.to_string()))?;
        let r = item
            .cast::<PyRecord>()
            .map_err(|_| BoxError::new(format!("box returned a non-Record item: {item}")))?;
        v.push(r.borrow().0.clone());
    }
    Ok(v)
}

#[pymethods]
impl PyNet {
    /// A box running `func(record) -> Record | list[Record] | None` under
    /// the signature `"{in} -> {out1} | {out2}"`.
    #[staticmethod]
    #[pyo3(name = "box")]
    fn box_(name: String, signature: &str, func: Py<PyAny>) -> PyResult<Self> {
        let sig = BoxSignature::parse(signature).map_err(value_err)?;
        let func = Arc::new(func);
        Ok(Self(comb::box_node(name, sig, move |r, _| {
            Python::attach(|py| {
                let out = func.call1(py, (PyRecord(r),)).map_err(|e| BoxError::new(e.to_string()))?;
                kernel_output(out.bind(py))
            })
        })))
    }

    #[staticmethod]
    #[pyo3(signature = (slots, repeating=false))]
    fn sync(slots: Vec<PyRef<'_, PyTypePattern>>, repeating: bool) -> Self {
        Self(comb::sync(patterns(&slots), repeating))
    }

    #[staticmethod]
    fn parallel(branches: Vec<PyRef<'_, PyNet>>) -> Self {
        Self(comb::parallel(branches.iter().map(|b| b.0.clone()).collect()))
    }

    /// The stateful-feedback idiom: joins each `r` record with the single
    /// live `s` record and runs `body` on the merge.
    #[staticmethod]
    fn stateful(r: PyRef<'_, PyTypePattern>, s: PyRef<'_, PyTypePattern>, body: PyRef<'_, PyNet>) -> Self {
        Self(comb::stateful(r.0.clone(), s.0.clone(), body.0.clone()))
    }

    fn then(&self, next: PyRef<'_, PyNet>) -> Self {
        Self(comb::serial(self.0.clone(), next.0.clone()))
    }

    fn __rshift__(&self, next: PyRef<'_, PyNet>) -> Self {
        self.then(next)
    }

    fn __or__(&self, other: PyRef<'_, PyNet>) -> Self {
        Self(comb::parallel(vec![self.0.clone(), other.0.clone()]))
    }

    fn star(&self, exit: PyRef<'_, PyTypePattern>) -> Self {
        Self(comb::star(self.0.clone(), exit.0.clone()))
    }

    fn split(&self, tag: String) -> Self {
        Self(comb::split(self.0.clone(), tag))
    }

    #[pyo3(signature = (back, limit=None))]
    fn feedback(&self, back: PyRef<'_, PyTypePattern>, limit: Option<u64>) -> Self {
        let f = comb::feedback(self.0.clone(), back.0.clone());
        Self(match limit {
            Some(l) => f.with_limit(l),
            None => f,
        })
    }

    /// Text dump of the compiled graph.
    fn dump(&self) -> PyResult<String> {
        compile(&self.0).map(|g| g.dump()).map_err(value_err)
    }

    /// Runs the network to quiescence. Returns the exit records and a
    /// metrics dict.
    #[pyo3(signature = (records, workers=1, allow_parked=false))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        records: Vec<PyRef<'py, PyRecord>>,
        workers: usize,
        allow_parked: bool,
    ) -> PyResult<(Vec<PyRecord>, Bound<'py, PyAny>)> {
        let graph = compile(&self.0).map_err(value_err)?;
        let inputs: Vec<streamcoord::Record> = records.iter().map(|r| r.0.clone()).collect();
        drop(records);
        let cfg = RunConfig { allow_parked, ..RunConfig::with_workers(workers) };
        let out = py.detach(|| runtime::run(&graph, inputs, &cfg)).map_err(runtime_err)?;
        let metrics = to_py_json(py, &out.metrics)?;
        Ok((out.records.into_iter().map(PyRecord).collect(), metrics))
    }

    fn __repr__(&self) -> String {
        format!("Net({})", self.0.label())
    }
}

/// A dense square matrix of f64 in row-major order.
#[pyclass(name = "Matrix", module = "streamcoord", frozen)]
struct PyMatrix(Arc<DenseMatrix>);

#[pymethods]
impl PyMatrix {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("matrix must be square"));
        }
        Ok(Self(Arc::new(DenseMatrix::from_vec(n, rows.concat()))))
    }

    /// Seeded symmetric positive definite test matrix.
    #[staticmethod]
    fn spd(n: usize, seed: u64) -> Self {
        Self(Arc::new(cholesky::gen_spd(n, seed)))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        cholesky::load_matrix(&path).map(|m| Self(Arc::new(m))).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        cholesky::save_matrix(&path, &self.0).map_err(runtime_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.0.n();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("index ({i},{j}) out of range for n={n}")));
        }
        Ok(self.0.get(i, j))
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.0.n()).map(|i| self.0.row(i).to_vec()).collect()
    }

    fn frobenius(&self) -> f64 {
        self.0.frobenius()
    }

    fn __repr__(&self) -> String {
        format!("Matrix(n={})", self.0.n())
    }
}

fn parse_impl(name: &str) -> PyResult<Impl> {
    name.parse().map_err(PyValueError::new_err)
}

/// Factors `a` with tiles of size `block`. Returns `(L, metrics)`; the
/// metrics dict depends on the implementation.
#[pyfunction]
#[pyo3(name = "factor", signature = (a, block, implementation="serial", workers=1))]
fn factor<'py>(
    py: Python<'py>,
    a: PyRef<'py, PyMatrix>,
    block: usize,
    implementation: &str,
    workers: usize,
) -> PyResult<(PyMatrix, Bound<'py, PyAny>)> {
    let which = parse_impl(implementation)?;
    let a = a.0.clone();
    let run_cfg = RunConfig::with_workers(workers);
    let cnc_cfg = CncConfig::with_workers(workers);
    enum M {
        Counts(TaskCounts),
        Run(runtime::RunMetrics),
        Cnc(streamcoord::cnc::CncMetrics),
    }
    let result = py.detach(|| -> Result<(DenseMatrix, M), String> {
        let s = |e: &dyn std::fmt::Display| e.to_string();
        Ok(match which {
            Impl::Serial => {
                let tiles = decompose(&a, block).map_err(|e| s(&e))?;
                let counts = TaskCounts::for_blocks(tiles.p());
                (assemble(&serial_tiled_cholesky(&tiles).map_err(|e| s(&e))?), M::Counts(counts))
            }
            Impl::Barrier => run_barrier(a, block, &run_cfg).map(|(l, m)| (l, M::Run(m))).map_err(|e| s(&e))?,
            Impl::Dataflow => run_dataflow(a, block, &run_cfg).map(|(l, m)| (l, M::Run(m))).map_err(|e| s(&e))?,
            Impl::Cnc | Impl::CncTuned => run_cnc(&a, block, which == Impl::CncTuned, &cnc_cfg)
                .map(|(l, m)| (l, M::Cnc(m)))
                .map_err(|e| s(&e))?,
        })
    });
    let (l, m) = result.map_err(runtime_err)?;
    let metrics = match m {
        M::Counts(c) => {
            let d = PyDict::new(py);
            d.set_item("potrf", c.potrf)?;
            d.set_item("trsm", c.trsm)?;
            d.set_item("update", c.update)?;
            d.into_any()
        }
        M::Run(m) => to_py_json(py, &m)?,
        M::Cnc(m) => to_py_json(py, &m)?,
    };
    Ok((PyMatrix(Arc::new(l)), metrics))
}

/// ‖A − L·Lᵀ‖_F / ‖A‖_F
#[pyfunction]
fn residual(a: PyRef<'_, PyMatrix>, l: PyRef<'_, PyMatrix>) -> f64 {
    cholesky::residual(&a.0, &l.0)
}

/// Order-independent 64-bit hash of the entries' bit patterns.
#[pyfunction]
fn checksum(m: PyRef<'_, PyMatrix>) -> u64 {
    bench::checksum(&m.0)
}

/// Kernel call counts `{"potrf", "trsm", "update"}` of a p x p tile grid.
#[pyfunction]
fn task_counts(py: Python<'_>, p: usize) -> PyResult<Bound<'_, PyDict>> {
    let c = TaskCounts::for_blocks(p);
    let d = PyDict::new(py);
    d.set_item("potrf", c.potrf)?;
    d.set_item("trsm", c.trsm)?;
    d.set_item("update", c.update)?;
    Ok(d)
}

/// Runs the benchmark cross-product and returns its rows as dicts with
/// the CSV column names.
#[pyfunction]
#[pyo3(name = "bench", signature = (impls=vec!["all".to_owned()], n=256, blocks=vec![64], workers=vec![1], seed=1, reps=1, check=false))]
fn run_bench<'py>(
    py: Python<'py>,
    impls: Vec<String>,
    n: usize,
    blocks: Vec<usize>,
    workers: Vec<usize>,
    seed: u64,
    reps: usize,
    check: bool,
) -> PyResult<Bound<'py, PyList>> {
    let mut which = Vec::new();
    for name in &impls {
        if name == "all" {
            which.extend(Impl::ALL);
        } else {
            which.push(parse_impl(name)?);
        }
    }
    which.dedup();
    let cfg = BenchConfig { impls: which, n, blocks, workers, seed, reps, check, ..BenchConfig::default() };
    let rows = py.detach(|| bench::run_bench(&cfg)).map_err(|e| match e {
        bench::BenchError::Config(_) => value_err(e),
        _ => runtime_err(e),
    })?;
    let out = PyList::empty(py);
    for row in &rows {
        out.append(to_py_json(py, row)?)?;
    }
    Ok(out)
}

#[pymodule]
#[pyo3(name = "streamcoord")]
fn streamcoord_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecord>()?;
    m.add_class::<PyTypePattern>()?;
    m.add_class::<PyNet>()?;
    m.add_class::<PyMatrix>()?;
    m.add_function(wrap_pyfunction!(best_match, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(factor, m)?)?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(checksum, m)?)?;
    m.add_function(wrap_pyfunction!(task_counts, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add("CSV_HEADER", bench::CSV_HEADER)?;
    m.add("RESIDUAL_TOLERANCE", bench::RESIDUAL_TOLERANCE)?;
    Ok(())
}
