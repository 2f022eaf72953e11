//! Exact statevector simulation of small circuits built from `Ry` rotations
//! and CNOTs, with parameter-shift gradients of Pauli-Z expectations.
//!
//! Basis indexing is little-endian: qubit 0 is the least significant bit of
//! the amplitude index.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the simulator will allocate.
pub const MAX_QUBITS: usize = 20;

/// Pure state of `n_qubits` qubits as `2^n` complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` wires.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!(
                "{n_qubits} qubits requested, supported range is 1..={MAX_QUBITS}"
            )));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the caller is
    /// responsible for normalization.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Contract(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!(
                "{n_qubits} qubits exceeds {MAX_QUBITS}"
            )));
        }
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::Index(format!(
                "qubit {qubit} out of range for {} qubits",
                self.n_qubits
            )));
        }
        Ok(())
    }

    /// Applies `Ry(angle) = [[cos θ/2, −sin θ/2], [sin θ/2, cos θ/2]]` to one wire.
    pub fn apply_ry(&mut self, qubit: usize, angle: f64) -> Result<()> {
        self.check_qubit(qubit)?;
        let (s, c) = (angle / 2.0).sin_cos();
        let bit = 1usize << qubit;
        for i in 0..self.amplitudes.len() {
            if i & bit == 0 {
                let a0 = self.amplitudes[i];
                let a1 = self.amplitudes[i | bit];
                self.amplitudes[i] = a0 * c - a1 * s;
                self.amplitudes[i | bit] = a0 * s + a1 * c;
            }
        }
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::Index(format!(
                "CNOT control and target are both qubit {control}"
            )));
        }
        let cbit = 1usize << control;
        let tbit = 1usize << target;
        for i in 0..self.amplitudes.len() {
            if i & cbit != 0 && i & tbit == 0 {
                self.amplitudes.swap(i, i | tbit);
            }
        }
        Ok(())
    }

    /// `⟨Z⟩` on one wire: `Σ ±|a_k|²`, positive where the qubit's bit is 0.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let bit = 1usize << qubit;
        let value = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if i & bit == 0 {
                    a.norm_sqr()
                } else {
                    -a.norm_sqr()
                }
            })
            .sum::<f64>();
        Ok(value.clamp(-1.0, 1.0))
    }

    /// Tensor product with `other` placed on the higher-indexed wires.
    pub fn kron_above(&self, other: &StateVector) -> Result<StateVector> {
        let n = self.n_qubits + other.n_qubits;
        if n > MAX_QUBITS {
            return Err(Error::Capacity(format!("{n} qubits exceeds {MAX_QUBITS}")));
        }
        let mut amplitudes = Vec::with_capacity(1 << n);
        for hi in &other.amplitudes {
            for lo in &self.amplitudes {
                amplitudes.push(lo * hi);
            }
        }
        Ok(StateVector {
            n_qubits: n,
            amplitudes,
        })
    }
}

/// Angle source of an `Ry` gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Angle {
    /// Read from the parameter vector.
    Slot(usize),
    /// Literal angle in radians.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Ry { qubit: usize, angle: Angle },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn ry(qubit: usize, slot: usize) -> Self {
        Gate::Ry {
            qubit,
            angle: Angle::Slot(slot),
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Gate::Cnot { control, target }
    }

    fn apply(&self, state: &mut StateVector, params: &[f64], shift: f64) -> Result<()> {
        match *self {
            Gate::Ry { qubit, angle } => {
                let theta = match angle {
                    Angle::Slot(s) => params[s],
                    Angle::Fixed(a) => a,
                };
                state.apply_ry(qubit, theta + shift)
            }
            Gate::Cnot { control, target } => state.apply_cnot(control, target),
        }
    }
}

/// Ordered gate list over a fixed register with `n_params` parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSequence {
    n_qubits: usize,
    n_params: usize,
    gates: Vec<Gate>,
}

impl GateSequence {
    pub fn new(n_qubits: usize, n_params: usize, gates: Vec<Gate>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!("{n_qubits} qubits")));
        }
        for (i, gate) in gates.iter().enumerate() {
            match *gate {
                Gate::Ry { qubit, angle } => {
                    if qubit >= n_qubits {
                        return Err(Error::Index(format!(
                            "gate {i}: qubit {qubit} >= {n_qubits}"
                        )));
                    }
                    if let Angle::Slot(s) = angle {
                        if s >= n_params {
                            return Err(Error::Contract(format!(
                                "gate {i}: slot {s} >= n_params {n_params}"
                            )));
                        }
                    }
                }
                Gate::Cnot { control, target } => {
                    if control >= n_qubits || target >= n_qubits || control == target {
                        return Err(Error::Index(format!(
                            "gate {i}: invalid CNOT {control}->{target} on {n_qubits} qubits"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            n_qubits,
            n_params,
            gates,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    fn check_inputs(&self, state: &StateVector, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        if state.n_qubits != self.n_qubits {
            return Err(Error::Contract(format!(
                "circuit acts on {} qubits, state has {}",
                self.n_qubits, state.n_qubits
            )));
        }
        Ok(())
    }
}

/// Applies every gate of `seq` to a copy of `state`, in order.
pub fn run_circuit(state: &StateVector, seq: &GateSequence, params: &[f64]) -> Result<StateVector> {
    seq.check_inputs(state, params)?;
    let mut out = state.clone();
    for gate in &seq.gates {
        gate.apply(&mut out, params, 0.0)?;
    }
    Ok(out)
}

/// Gradient of `⟨Z_readout⟩` after `seq` with respect to every parameter slot.
///
/// Each slotted `Ry` occurrence is shifted by ±π/2 on its own; occurrences
/// sharing a slot accumulate into the same component.
pub fn param_shift_grad(
    seq: &GateSequence,
    params: &[f64],
    input: &StateVector,
    readout_qubit: usize,
) -> Result<Vec<f64>> {
    seq.check_inputs(input, params)?;
    input.check_qubit(readout_qubit)?;

    // prefix[i] is the state before gate i.
    let mut prefix = Vec::with_capacity(seq.gates.len());
    let mut state = input.clone();
    for gate in &seq.gates {
        prefix.push(state.clone());
        gate.apply(&mut state, params, 0.0)?;
    }

    let mut grad = vec![0.0; seq.n_params];
    for (i, gate) in seq.gates.iter().enumerate() {
        let Gate::Ry {
            angle: Angle::Slot(slot),
            ..
        } = *gate
        else {
            continue;
        };
        let shifted = |shift: f64| -> Result<f64> {
            let mut s = prefix[i].clone();
            gate.apply(&mut s, params, shift)?;
            for g in &seq.gates[i + 1..] {
                g.apply(&mut s, params, 0.0)?;
            }
            s.expectation_z(readout_qubit)
        };
        grad[slot] += (shifted(FRAC_PI_2)? - shifted(-FRAC_PI_2)?) / 2.0;
    }
    Ok(grad)
}
