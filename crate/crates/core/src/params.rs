use crate::tensor::Tensor;

/// A fixed, ordered collection of named parameter tensors. Gradient
/// containers share the layout of the parameters they differentiate, so
/// optimizers can zip the two lists.
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
