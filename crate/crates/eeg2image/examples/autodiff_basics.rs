//! Tour of the tensor autodiff engine: build a small computation, run the
//! backward pass, and verify the analytic gradient against central finite
//! differences.

use eeg2image::check::{central_difference, max_relative_error};
use eeg2image::Tensor;

fn main() -> eeg2image::Result<()> {
    // f(w) = sum(tanh(x W)) for a fixed input x
    let x = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75], &[2, 3])?;
    let w0 = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
    let w = Tensor::param(w0.clone(), &[3, 2])?;

    let loss = x.matmul(&w)?.tanh_act().sum_all();
    println!("loss = {:.6}", loss.item());
    loss.backward()?;
    let analytic = w.grad().expect("gradient populated by backward()");

    let mut f = |v: &[f64]| {
        let w = Tensor::from_vec(v.to_vec(), &[3, 2]).unwrap();
        x.matmul(&w).unwrap().tanh_act().sum_all().item()
    };
    let numeric = central_difference(&mut f, &w0, 1e-5);

    println!("analytic grad: {analytic:.6?}");
    println!("numeric  grad: {numeric:.6?}");
    println!("max relative error: {:.3e}", max_relative_error(&analytic, &numeric));
    Ok(())
}
