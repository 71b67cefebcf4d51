use super::params::{GradMap, ParamStore};
use super::tape::{NodeId, Tape};
use super::NumError;

/// Step used for central differences.
pub const FD_EPSILON: f64 = 1e-3;

/// Floor in the relative-error denominator so near-zero pairs compare sanely.
pub const REL_FLOOR: f64 = 1e-6;

/// |a - b| / max(|a|, |b|, floor)
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Outcome of comparing analytic gradients against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max relative error per parameter, name-sorted
    pub per_param: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.per_param.iter().all(|(_, e)| *e <= self.tolerance)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.per_param
            .iter()
            .filter(|(_, e)| *e > self.tolerance)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn worst(&self) -> Option<(&str, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, e)| (n.as_str(), *e))
    }
}

fn eval_loss<F>(store: &ParamStore, build: &mut F) -> Result<f64, NumError>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId, NumError>,
{
    let mut tape = Tape::inference();
    let loss = build(store, &mut tape)?;
    tape.value(loss).as_scalar()
}

/// Central-difference gradients of a scalar loss with respect to every
/// parameter in the store. The builder must be deterministic: any noise it
/// uses has to be captured as fixed constants.
pub fn fd_gradients<F>(store: &mut ParamStore, mut build: F) -> Result<GradMap, NumError>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId, NumError>,
{
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut out = GradMap::default();
    for name in names {
        let len = store.get(&name)?.len();
        let shape = store.get(&name)?.shape().to_vec();
        let mut grad = vec![0.0; len];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = store.get(&name)?.data()[i];
            store.get_mut(&name)?.data_mut()[i] = orig + FD_EPSILON;
            let plus = eval_loss(store, &mut build)?;
            store.get_mut(&name)?.data_mut()[i] = orig - FD_EPSILON;
            let minus = eval_loss(store, &mut build)?;
            store.get_mut(&name)?.data_mut()[i] = orig;
            *g = (plus - minus) / (2.0 * FD_EPSILON);
        }
        out.insert(
            name,
            super::tensor::Tensor::from_vec(&shape, grad).expect("param shape"),
        );
    }
    Ok(out)
}

/// Max relative error per parameter between two gradient maps.
pub fn compare_grad_maps(a: &GradMap, b: &GradMap) -> Vec<(String, f64)> {
    a.iter()
        .map(|(name, ga)| {
            let worst = match b.get(name) {
                Ok(gb) => ga
                    .data()
                    .iter()
                    .zip(gb.data())
                    .map(|(&x, &y)| rel_error(x, y))
                    .fold(0.0, f64::max),
                Err(_) => f64::INFINITY,
            };
            (name.clone(), worst)
        })
        .collect()
}

/// Run the builder once for analytic gradients and once per perturbed entry
/// for finite differences, then report the max relative error per parameter.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    tolerance: f64,
    mut build: F,
) -> Result<GradCheckReport, NumError>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId, NumError>,
{
    let mut tape = Tape::inference();
    let loss = build(store, &mut tape)?;
    let analytic = tape.backward(loss, store)?;
    drop(tape);
    let numeric = fd_gradients(store, &mut build)?;
    Ok(GradCheckReport {
        per_param: compare_grad_maps(&analytic, &numeric),
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_model_passes_tight() {
        let mut store = ParamStore::new(21);
        store.add_affine("lin", 3, 2).unwrap();
        let report = check_gradients(&mut store, 1e-6, |store, tape| {
            let x = tape.constant_vec(vec![0.3, -0.7, 1.1]);
            let y = tape.affine(store, "lin", x)?;
            tape.dot(y, y)
        })
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst());
    }

    #[test]
    fn lstm_two_step_unroll_passes() {
        let mut store = ParamStore::new(22);
        store.add_lstm("cell", 3, 4).unwrap();
        let report = check_gradients(&mut store, 1e-4, |store, tape| {
            let x1 = tape.constant_vec(vec![0.5, -0.2, 0.9]);
            let x2 = tape.constant_vec(vec![-0.4, 0.8, 0.1]);
            let s0 = tape.zero_state(4);
            let s1 = tape.lstm_cell(store, "cell", x1, s0)?;
            let s2 = tape.lstm_cell(store, "cell", x2, s1)?;
            tape.dot(s2.h, s2.h)
        })
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst());
    }

    #[test]
    fn corrupted_gradient_flags_only_that_parameter() {
        let mut store = ParamStore::new(23);
        store.add_affine("a", 2, 2).unwrap();
        store.add_affine("b", 2, 2).unwrap();
        let build = |store: &ParamStore, tape: &mut Tape| {
            let x = tape.constant_vec(vec![1.0, -1.0]);
            let h = tape.affine(store, "a", x)?;
            let t = tape.tanh(h);
            let y = tape.affine(store, "b", t)?;
            tape.dot(y, y)
        };
        let mut tape = Tape::inference();
        let loss = build(&store, &mut tape).unwrap();
        let mut analytic = tape.backward(loss, &store).unwrap();
        analytic.get_mut("a.w").unwrap().data_mut()[0] += 0.1;
        let numeric = fd_gradients(&mut store, build).unwrap();
        let report = GradCheckReport {
            per_param: compare_grad_maps(&analytic, &numeric),
            tolerance: 1e-4,
        };
        assert!(!report.passed());
        assert_eq!(report.failing(), vec!["a.w"]);
    }

    #[test]
    fn lstm_state_reuse_accumulates_both_paths() {
        // h feeds two downstream consumers; gradient must sum over both.
        let mut store = ParamStore::new(24);
        store.add_lstm("cell", 2, 3).unwrap();
        store.add_affine("out", 3, 1).unwrap();
        let report = check_gradients(&mut store, 1e-4, |store, tape| {
            let x = tape.constant_vec(vec![0.2, -0.6]);
            let s0 = tape.zero_state(3);
            let s1 = tape.lstm_cell(store, "cell", x, s0)?;
            let y = tape.affine(store, "out", s1.h)?;
            let y0 = tape.slice(y, 0, 1)?;
            let a = tape.dot(s1.h, s1.h)?;
            let b = tape.dot(y0, y0)?;
            let both = tape.pack_scalars(&[a, b])?;
            let ones = tape.constant_vec(vec![1.0, 1.0]);
            tape.dot(both, ones)
        })
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst());
    }

    #[test]
    fn rel_error_uses_floor_near_zero() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!(rel_error(1e-9, 0.0) < 1e-2);
        assert!(rel_error(2.0, 1.0) > 0.4);
    }
}
