use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Candidate operation on a cell edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    SkipConnect,
    #[serde(rename = "sep_conv_3x3")]
    SepConv3x3,
    #[serde(rename = "sep_conv_5x5")]
    SepConv5x5,
    #[serde(rename = "dil_conv_3x3")]
    DilConv3x3,
    #[serde(rename = "dil_conv_5x5")]
    DilConv5x5,
    #[serde(rename = "max_pool_3x3")]
    MaxPool3x3,
    #[serde(rename = "avg_pool_3x3")]
    AvgPool3x3,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::SkipConnect,
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
        OpKind::MaxPool3x3,
        OpKind::AvgPool3x3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::SkipConnect => "skip_connect",
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn is_parametric(self) -> bool {
        !matches!(
            self,
            OpKind::SkipConnect | OpKind::MaxPool3x3 | OpKind::AvgPool3x3
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::invalid("OpKind", format!("unknown operation `{s}`")))
    }
}

/// Edges of a cell with two input nodes and `nodes` intermediate nodes.
///
/// States are numbered `0, 1` (inputs) then `2..nodes+2`. Edges are listed
/// grouped by destination: all edges into state 2, then into state 3, etc.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellTopology {
    pub nodes: usize,
}

impl CellTopology {
    pub const INPUTS: usize = 2;

    pub fn new(nodes: usize) -> Self {
        CellTopology { nodes }
    }

    pub fn num_edges(&self) -> usize {
        (0..self.nodes).map(|n| n + Self::INPUTS).sum()
    }

    /// First edge index into state `to` (`to >= 2`).
    pub fn first_edge(&self, to: usize) -> usize {
        (Self::INPUTS..to).sum()
    }

    pub fn edge_index(&self, from: usize, to: usize) -> usize {
        debug_assert!(from < to && to >= Self::INPUTS);
        self.first_edge(to) + from
    }

    /// `(from, to)` for every edge in index order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (Self::INPUTS..self.nodes + Self::INPUTS)
            .flat_map(|to| (0..to).map(move |from| (from, to)))
            .collect()
    }
}
