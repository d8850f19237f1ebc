use reborn::gradcheck::{check_component, run_all, Component, MIN_TRIALS, TOLERANCE};
use reborn::layers::{Layer, Mode, Param};
use reborn::{Result, Rng, Tensor};

#[test]
fn every_component_matches_finite_differences() {
    let reports = run_all(MIN_TRIALS, 7).unwrap();
    for r in &reports {
        println!("{:<32} worst {:.3e} at {}", r.component, r.worst_rel_err, r.worst_at);
    }
    for r in &reports {
        assert!(r.passed(), "{} failed: {:.3e} at {}", r.component, r.worst_rel_err, r.worst_at);
    }
}

/// A conv whose backward is scaled by 1.01: the checker must notice.
struct Corrupted(reborn::layers::Conv2d<f64>);

impl Layer<f64> for Corrupted {
    fn kind(&self) -> &'static str {
        "corrupted"
    }
    fn forward(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
        self.0.forward(x, mode)
    }
    fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.0.backward(g)?.scale(1.01))
    }
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.0.output_shape(input)
    }
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        self.0.visit_params(prefix, f)
    }
}

#[test]
fn corrupted_backward_is_caught() {
    let c = Component::new("corrupted", &[2, 2, 4, 4], Mode::Train, |rng| {
        let mut conv = reborn::layers::Conv2d::new(2, 2, 3, 1, 1, true)?;
        conv.weight.value = Tensor::from_fn(vec![2, 2, 3, 3], |_| rng.normal())?;
        Ok(Box::new(Corrupted(conv)))
    });
    let r = check_component(&c, MIN_TRIALS, &mut Rng::new(1)).unwrap();
    assert!(!r.passed());
    assert!(r.worst_rel_err > TOLERANCE);
    assert_eq!(r.worst_at, "input");
}
