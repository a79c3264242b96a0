//! Synthetic benchmark families with closed-form count oracles.
//!
//! Each family mimics the loop structure of a class of GPU benchmark kernels
//! (matrix-vector, matrix-matrix, triangular factorizations, data-dependent
//! guards). Oracles return counts in block-id order.

use super::{CfgProgram, Expr, GridSpec, Pred, ProgramBuilder};

pub const FAMILY_NAMES: [&str; 5] = ["linear", "bilinear", "trilinear", "triangular", "branchy"];

/// Iteration index at which the branchy family switches to its slow path.
const BRANCHY_SPLIT: i64 = 64;
/// `n` above which the branchy family runs its cleanup block.
const BRANCHY_TAIL: i64 = 192;

#[derive(Debug, Clone)]
pub struct Family {
    pub name: &'static str,
    pub description: &'static str,
    pub program: CfgProgram,
    pub default_grid: GridSpec,
    /// Hidden width used for the regularized network on this family.
    pub br_hidden: usize,
    oracle: fn(&[i64]) -> Vec<u64>,
}

impl Family {
    /// Exact per-block counts, in block-id order.
    pub fn oracle(&self, params: &[i64]) -> Vec<u64> {
        (self.oracle)(params)
    }
}

pub fn builtin_suite() -> Vec<Family> {
    vec![linear(), bilinear(), trilinear(), triangular(), branchy()]
}

pub fn family(name: &str) -> Option<Family> {
    builtin_suite().into_iter().find(|f| f.name == name)
}

fn u(v: i64) -> u64 {
    v as u64
}

fn linear() -> Family {
    let mut p = ProgramBuilder::new("linear");
    let n = p.param("n", 1, 512);
    let mut k = p.kernel("gesummv");
    let i = k.var();
    let entry = k.block();
    let header = k.block();
    let body = k.block();
    let latch = k.block();
    let exit = k.block();
    k.assign(entry, i, Expr::c(0));
    k.jump(entry, header);
    k.branch(header, Pred::lt(Expr::var(i), n), body, exit);
    k.jump(body, latch);
    k.assign(latch, i, Expr::var(i) + 1);
    k.jump(latch, header);
    k.exit(exit);
    k.finish().expect("linear kernel");

    Family {
        name: "linear",
        description: "single counted loop (count ~ n)",
        program: p.build().expect("linear family"),
        default_grid: "256".parse().expect("grid"),
        br_hidden: 1,
        oracle: |p| {
            let n = u(p[0]);
            vec![1, n + 1, n, n, 1]
        },
    }
}

fn bilinear() -> Family {
    let mut p = ProgramBuilder::new("bilinear");
    let n = p.param("n", 1, 64);
    let m = p.param("m", 1, 64);

    let mut k = p.kernel("ax");
    let i = k.var();
    let j = k.var();
    let entry = k.block();
    let outer = k.block();
    let pre = k.block();
    let inner = k.block();
    let body = k.block();
    let latch = k.block();
    let exit = k.block();
    k.assign(entry, i, Expr::c(0));
    k.jump(entry, outer);
    k.branch(outer, Pred::lt(Expr::var(i), n.clone()), pre, exit);
    k.assign(pre, j, Expr::c(0));
    k.jump(pre, inner);
    k.branch(inner, Pred::lt(Expr::var(j), m.clone()), body, latch);
    k.assign(body, j, Expr::var(j) + 1);
    k.jump(body, inner);
    k.assign(latch, i, Expr::var(i) + 1);
    k.jump(latch, outer);
    k.exit(exit);
    k.finish().expect("ax kernel");

    let mut k = p.kernel("aty");
    let j = k.var();
    let entry = k.block();
    let header = k.block();
    let body = k.block();
    let exit = k.block();
    k.assign(entry, j, Expr::c(0));
    k.jump(entry, header);
    k.branch(header, Pred::lt(Expr::var(j), m), body, exit);
    k.assign(body, j, Expr::var(j) + 1);
    k.jump(body, header);
    k.exit(exit);
    k.finish().expect("aty kernel");

    Family {
        name: "bilinear",
        description: "row loop over a column loop plus a transposed pass (count ~ n*m)",
        program: p.build().expect("bilinear family"),
        default_grid: "32x32".parse().expect("grid"),
        br_hidden: 1,
        oracle: |p| {
            let (n, m) = (u(p[0]), u(p[1]));
            vec![1, n + 1, n, n * (m + 1), n * m, n, 1, 1, m + 1, m, 1]
        },
    }
}

/// Rotated (bottom-tested) triple nest, as loop rotation lowers a gemm kernel
/// whose trip counts are known to be positive.
fn trilinear() -> Family {
    let mut p = ProgramBuilder::new("trilinear");
    let n = p.param("n", 1, 24);
    let m = p.param("m", 1, 24);
    let kk = p.param("k", 1, 24);
    let mut k = p.kernel("gemm");
    let i = k.var();
    let j = k.var();
    let l = k.var();
    let entry = k.block();
    let fma = k.block();
    let middle = k.block();
    let outer = k.block();
    let exit = k.block();
    k.assign(entry, i, Expr::c(0)).assign(entry, j, Expr::c(0)).assign(entry, l, Expr::c(0));
    k.jump(entry, fma);
    k.assign(fma, l, Expr::var(l) + 1);
    k.branch(fma, Pred::lt(Expr::var(l), kk), fma, middle);
    k.assign(middle, l, Expr::c(0)).assign(middle, j, Expr::var(j) + 1);
    k.branch(middle, Pred::lt(Expr::var(j), m), fma, outer);
    k.assign(outer, j, Expr::c(0)).assign(outer, i, Expr::var(i) + 1);
    k.branch(outer, Pred::lt(Expr::var(i), n), fma, exit);
    k.exit(exit);
    k.finish().expect("gemm kernel");

    Family {
        name: "trilinear",
        description: "gemm-like triple loop nest (count ~ n*m*k)",
        program: p.build().expect("trilinear family"),
        default_grid: "12x12x12".parse().expect("grid"),
        br_hidden: 1,
        oracle: |p| {
            let (n, m, k) = (u(p[0]), u(p[1]), u(p[2]));
            vec![1, n * m * k, n * m, n, 1]
        },
    }
}

fn triangular() -> Family {
    let mut p = ProgramBuilder::new("triangular");
    let n = p.param("n", 1, 256);
    let mut k = p.kernel("lu");
    let i = k.var();
    let j = k.var();
    let entry = k.block();
    let outer = k.block();
    let pre = k.block();
    let inner = k.block();
    let body = k.block();
    let latch = k.block();
    let exit = k.block();
    k.assign(entry, i, Expr::c(0));
    k.jump(entry, outer);
    k.branch(outer, Pred::lt(Expr::var(i), n), pre, exit);
    k.assign(pre, j, Expr::c(0));
    k.jump(pre, inner);
    k.branch(inner, Pred::le(Expr::var(j), Expr::var(i)), body, latch);
    k.assign(body, j, Expr::var(j) + 1);
    k.jump(body, inner);
    k.assign(latch, i, Expr::var(i) + 1);
    k.jump(latch, outer);
    k.exit(exit);
    k.finish().expect("lu kernel");

    Family {
        name: "triangular",
        description: "lower-triangular nest as in LU / Gram-Schmidt (count ~ n(n+1)/2)",
        program: p.build().expect("triangular family"),
        default_grid: "256".parse().expect("grid"),
        br_hidden: 1,
        oracle: |p| {
            let n = u(p[0]);
            let tri = n * (n + 1) / 2;
            vec![1, n + 1, n, tri + n, tri, n, 1]
        },
    }
}

fn branchy() -> Family {
    let mut p = ProgramBuilder::new("branchy");
    let n = p.param("n", 1, 256);
    let mut k = p.kernel("guarded");
    let i = k.var();
    let entry = k.block();
    let header = k.block();
    let test = k.block();
    let fast = k.block();
    let slow = k.block();
    let latch = k.block();
    let tail = k.block();
    let cleanup = k.block();
    let exit = k.block();
    k.assign(entry, i, Expr::c(0));
    k.jump(entry, header);
    k.branch(header, Pred::lt(Expr::var(i), n.clone()), test, tail);
    k.branch(test, Pred::lt(Expr::var(i), Expr::c(BRANCHY_SPLIT)), fast, slow);
    k.jump(fast, latch);
    k.jump(slow, latch);
    k.assign(latch, i, Expr::var(i) + 1);
    k.jump(latch, header);
    k.branch(tail, Pred::gt(n, Expr::c(BRANCHY_TAIL)), cleanup, exit);
    k.jump(cleanup, exit);
    k.exit(exit);
    k.finish().expect("guarded kernel");

    Family {
        name: "branchy",
        description: "data-dependent guards producing zero counts for small inputs",
        program: p.build().expect("branchy family"),
        default_grid: "256".parse().expect("grid"),
        br_hidden: 10,
        oracle: |p| {
            let n = p[0];
            let fast = u(n.min(BRANCHY_SPLIT));
            let slow = u((n - BRANCHY_SPLIT).max(0));
            let cleanup = u64::from(n > BRANCHY_TAIL);
            let n = u(n);
            vec![1, n + 1, n, fast, slow, n, 1, cleanup, 1]
        },
    }
}
