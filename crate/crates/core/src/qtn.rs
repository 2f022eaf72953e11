//! Tensor-network circuit topologies (MPS, TTN, MERA) assembled from
//! parameterized two-qubit blocks, and the product-state pixel encoding.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Angle, Gate, GateSequence, StateVector};

/// Two-qubit unitary block substituted for every tensor node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BlockKind {
    /// `Ry ⊗ Ry`, CNOT, `Ry ⊗ Ry`: four slots.
    Simple,
    /// Per layer `Ry ⊗ Ry`, forward CNOT, reverse CNOT: two slots per layer.
    StronglyEntangling { layers: usize },
}

impl BlockKind {
    pub fn slots_per_block(&self) -> usize {
        match self {
            BlockKind::Simple => 4,
            BlockKind::StronglyEntangling { layers } => 2 * layers,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            BlockKind::StronglyEntangling { layers: 0 } => Err(Error::Contract(
                "strongly entangling block needs at least one layer".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Gates of one block acting on `(q1, q2)` with slots starting at `next_slot`.
/// Returns the gates and the number of slots consumed.
pub fn expand_block(
    block: BlockKind,
    q1: usize,
    q2: usize,
    next_slot: usize,
) -> Result<(Vec<Gate>, usize)> {
    if q1 == q2 {
        return Err(Error::Contract(format!("block on identical qubits {q1}")));
    }
    block.validate()?;
    let s = next_slot;
    let gates = match block {
        BlockKind::Simple => vec![
            Gate::ry(q1, s),
            Gate::ry(q2, s + 1),
            Gate::cnot(q1, q2),
            Gate::ry(q1, s + 2),
            Gate::ry(q2, s + 3),
        ],
        BlockKind::StronglyEntangling { layers } => (0..layers)
            .flat_map(|l| {
                [
                    Gate::ry(q1, s + 2 * l),
                    Gate::ry(q2, s + 2 * l + 1),
                    Gate::cnot(q1, q2),
                    Gate::cnot(q2, q1),
                ]
            })
            .collect(),
    };
    Ok((gates, block.slots_per_block()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Mps,
    Ttn,
    Mera,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Mps => "mps",
            TopologyKind::Ttn => "ttn",
            TopologyKind::Mera => "mera",
        })
    }
}

impl TopologyKind {
    pub fn supports(&self, n_qubits: usize) -> bool {
        match self {
            TopologyKind::Mps => n_qubits >= 2,
            TopologyKind::Ttn => n_qubits >= 2 && n_qubits.is_power_of_two(),
            TopologyKind::Mera => n_qubits >= 4 && n_qubits.is_power_of_two(),
        }
    }
}

/// A built circuit with its designated readout wire.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitTemplate {
    pub seq: GateSequence,
    pub readout_qubit: usize,
    pub topology: TopologyKind,
    pub block: BlockKind,
    /// Qubit pairs of every block, in application order.
    pub block_pairs: Vec<(usize, usize)>,
}

impl CircuitTemplate {
    pub fn n_qubits(&self) -> usize {
        self.seq.n_qubits()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_pairs.len()
    }

    pub fn param_count(&self) -> usize {
        self.seq.n_params()
    }

    /// One line per gate: `ry <qubit> <slot>` or `cnot <control> <target> -`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for gate in self.seq.gates() {
            match *gate {
                Gate::Ry { qubit, angle } => match angle {
                    Angle::Slot(s) => writeln!(out, "ry {qubit} {s}"),
                    Angle::Fixed(a) => writeln!(out, "ry {qubit} fixed:{a}"),
                },
                Gate::Cnot { control, target } => writeln!(out, "cnot {control},{target} -"),
            }
            .expect("writing to a String cannot fail");
        }
        out
    }
}

fn assemble(
    n_qubits: usize,
    topology: TopologyKind,
    block: BlockKind,
    pairs: Vec<(usize, usize)>,
    readout_qubit: usize,
) -> Result<CircuitTemplate> {
    block.validate()?;
    let mut gates = Vec::new();
    let mut next_slot = 0;
    for &(a, b) in &pairs {
        let (g, used) = expand_block(block, a, b, next_slot)?;
        gates.extend(g);
        next_slot += used;
    }
    Ok(CircuitTemplate {
        seq: GateSequence::new(n_qubits, next_slot, gates)?,
        readout_qubit,
        topology,
        block,
        block_pairs: pairs,
    })
}

/// Staircase of blocks on `(0,1), (1,2), …, (n−2, n−1)`; reads out the last wire.
pub fn build_mps(n_qubits: usize, block: BlockKind) -> Result<CircuitTemplate> {
    if !TopologyKind::Mps.supports(n_qubits) {
        return Err(Error::Contract(format!(
            "MPS needs at least 2 qubits, got {n_qubits}"
        )));
    }
    let pairs = (0..n_qubits - 1).map(|q| (q, q + 1)).collect();
    assemble(n_qubits, TopologyKind::Mps, block, pairs, n_qubits - 1)
}

/// Binary tree of coarse-graining blocks; the higher wire of each pair survives.
pub fn build_ttn(n_qubits: usize, block: BlockKind) -> Result<CircuitTemplate> {
    if !TopologyKind::Ttn.supports(n_qubits) {
        return Err(Error::Contract(format!(
            "TTN needs a power-of-two qubit count >= 2, got {n_qubits}"
        )));
    }
    let mut active: Vec<usize> = (0..n_qubits).collect();
    let mut pairs = Vec::new();
    while active.len() > 1 {
        active = active
            .chunks(2)
            .map(|p| {
                pairs.push((p[0], p[1]));
                p[1]
            })
            .collect();
    }
    assemble(n_qubits, TopologyKind::Ttn, block, pairs, active[0])
}

/// Tree of isometries with disentanglers on the interior neighbour pairs
/// `(a1,a2), (a3,a4), …` of each level before its isometries.
pub fn build_mera(n_qubits: usize, block: BlockKind) -> Result<CircuitTemplate> {
    if !TopologyKind::Mera.supports(n_qubits) {
        return Err(Error::Contract(format!(
            "MERA needs a power-of-two qubit count >= 4, got {n_qubits}"
        )));
    }
    let mut active: Vec<usize> = (0..n_qubits).collect();
    let mut pairs = Vec::new();
    while active.len() > 1 {
        let m = active.len();
        pairs.extend(
            (1..m.saturating_sub(1))
                .step_by(2)
                .map(|i| (active[i], active[i + 1])),
        );
        active = active
            .chunks(2)
            .map(|p| {
                pairs.push((p[0], p[1]));
                p[1]
            })
            .collect();
    }
    assemble(n_qubits, TopologyKind::Mera, block, pairs, active[0])
}

pub fn build(topology: TopologyKind, n_qubits: usize, block: BlockKind) -> Result<CircuitTemplate> {
    match topology {
        TopologyKind::Mps => build_mps(n_qubits, block),
        TopologyKind::Ttn => build_ttn(n_qubits, block),
        TopologyKind::Mera => build_mera(n_qubits, block),
    }
}

/// Square image patch, flattened row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    pixels: Vec<f64>,
}

impl Patch {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::Contract(format!(
                "patch side {side} needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        if let Some((i, p)) = pixels
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::Domain(format!("pixel {i} = {p} outside [0, 1]")));
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

/// Product state with qubit `j` in `cos(π p_j / 2)|0⟩ + sin(π p_j / 2)|1⟩`.
pub fn encode_patch(patch: &Patch) -> Result<StateVector> {
    encode_pixels(&patch.pixels)
}

/// [`encode_patch`] on a bare pixel slice.
pub fn encode_pixels(pixels: &[f64]) -> Result<StateVector> {
    if let Some((i, p)) = pixels
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::Domain(format!("pixel {i} = {p} outside [0, 1]")));
    }
    let mut state = StateVector::zero(pixels.len())?;
    for (q, &p) in pixels.iter().enumerate() {
        state.apply_ry(q, PI * p)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STRONG1: BlockKind = BlockKind::StronglyEntangling { layers: 1 };

    #[test]
    fn block_expansion_counts() {
        let (g, used) = expand_block(BlockKind::Simple, 0, 1, 0).unwrap();
        assert_eq!((g.len(), used), (5, 4));
        let (g, used) = expand_block(STRONG1, 2, 3, 0).unwrap();
        assert_eq!((g.len(), used), (4, 2));
        let (g, used) = expand_block(BlockKind::StronglyEntangling { layers: 2 }, 2, 3, 7).unwrap();
        assert_eq!((g.len(), used), (8, 4));
        assert_eq!(g[4], Gate::ry(2, 9));
        assert!(matches!(
            expand_block(BlockKind::Simple, 1, 1, 0),
            Err(Error::Contract(_))
        ));
        assert!(expand_block(BlockKind::StronglyEntangling { layers: 0 }, 0, 1, 0).is_err());
    }

    #[test]
    fn mps_layout() {
        let t = build_mps(4, BlockKind::Simple).unwrap();
        assert_eq!((t.n_blocks(), t.param_count(), t.readout_qubit), (3, 12, 3));
        assert_eq!(t.block_pairs, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(build_mps(8, BlockKind::Simple).unwrap().param_count(), 28);
        let t = build_mps(2, STRONG1).unwrap();
        assert_eq!((t.n_blocks(), t.readout_qubit), (1, 1));
        assert!(build_mps(1, BlockKind::Simple).is_err());
    }

    #[test]
    fn ttn_layout() {
        let t = build_ttn(4, BlockKind::Simple).unwrap();
        assert_eq!(t.block_pairs, vec![(0, 1), (2, 3), (1, 3)]);
        assert_eq!((t.param_count(), t.readout_qubit), (12, 3));
        let t = build_ttn(8, BlockKind::Simple).unwrap();
        assert_eq!((t.n_blocks(), t.param_count(), t.readout_qubit), (7, 28, 7));
        assert_eq!(build_ttn(4, STRONG1).unwrap().param_count(), 6);
        assert!(matches!(
            build_ttn(6, BlockKind::Simple),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mera_layout() {
        let t = build_mera(4, BlockKind::Simple).unwrap();
        assert_eq!(t.block_pairs, vec![(1, 2), (0, 1), (2, 3), (1, 3)]);
        assert_eq!((t.param_count(), t.readout_qubit), (16, 3));
        let t = build_mera(8, BlockKind::Simple).unwrap();
        assert_eq!(
            t.block_pairs,
            vec![
                (1, 2),
                (3, 4),
                (5, 6),
                (0, 1),
                (2, 3),
                (4, 5),
                (6, 7),
                (3, 5),
                (1, 3),
                (5, 7),
                (3, 7)
            ]
        );
        assert_eq!(
            (t.n_blocks(), t.param_count(), t.readout_qubit),
            (11, 44, 7)
        );
        assert!(build_mera(2, BlockKind::Simple).is_err());
        assert!(build_mera(12, BlockKind::Simple).is_err());
    }

    #[test]
    fn dump_is_line_per_gate() {
        let t = build_mps(2, BlockKind::Simple).unwrap();
        assert_eq!(t.dump(), "ry 0 0\nry 1 1\ncnot 0,1 -\nry 0 2\nry 1 3\n");
    }

    #[test]
    fn encode_examples() {
        let s = encode_patch(&Patch::new(2, vec![0.0; 4]).unwrap()).unwrap();
        assert_eq!(s, StateVector::zero(4).unwrap());

        let s = encode_patch(&Patch::new(1, vec![1.0]).unwrap()).unwrap();
        assert!(s.amplitudes()[0].norm() < 1e-15);
        assert!((s.amplitudes()[1].re - 1.0).abs() < 1e-15);

        // [0.5, 0.0]: qubit 0 in (|0⟩+|1⟩)/√2, qubit 1 in |0⟩.
        let s = encode_pixels(&[0.5, 0.0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [h, h, 0.0, 0.0];
        for (a, e) in s.amplitudes().iter().zip(expect) {
            assert!((a.re - e).abs() < 1e-12 && a.im == 0.0);
        }

        assert!(matches!(Patch::new(1, vec![1.5]), Err(Error::Domain(_))));
        assert!(matches!(encode_pixels(&[-0.1]), Err(Error::Domain(_))));
    }
}
