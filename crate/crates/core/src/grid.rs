//! The physical grid model: buses, branches, generators.
//!
//! Quantities follow the usual per-unit conventions: branch impedances in pu
//! on the system MVA base, loads and generation in MW/MVAr, bus voltage
//! magnitudes in pu of `base_kv`.

use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// External (file) bus number.
    pub id: u32,
    pub kind: BusKind,
    /// Active load, MW.
    pub p_load: f64,
    /// Reactive load, MVAr.
    pub q_load: f64,
    /// Shunt conductance, MW consumed at V = 1 pu.
    pub g_shunt: f64,
    /// Shunt susceptance, MVAr injected at V = 1 pu.
    pub b_shunt: f64,
    /// Nominal voltage, kV.
    pub base_kv: f64,
    /// Voltage magnitude in the file, pu.
    pub vm_init: f64,
    /// Voltage angle in the file, degrees.
    pub va_init: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    /// Series resistance, pu.
    pub r: f64,
    /// Series reactance, pu.
    pub x: f64,
    /// Total line-charging susceptance, pu.
    pub b_charging: f64,
    /// Off-nominal tap ratio; 1.0 means none (0 in a file is normalized at parse).
    pub tap: f64,
    /// Phase shift, degrees.
    pub shift_deg: f64,
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gen {
    pub bus: u32,
    /// Active power setpoint, MW.
    pub p_gen: f64,
    /// Reactive output in the file, MVAr.
    pub q_gen: f64,
    /// Regulated voltage magnitude, pu.
    pub v_setpoint: f64,
    pub p_max: f64,
    pub p_min: f64,
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// System power base, MVA.
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Gen>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("duplicate bus id {0}")]
    DuplicateBusId(u32),
    #[error("{kind} references unknown bus {bus}")]
    DanglingReference { kind: &'static str, bus: u32 },
    #[error("grid has more than one slack bus")]
    MultipleSlack,
    #[error("grid has no slack bus")]
    NoSlack,
    #[error("invalid grid data: {0}")]
    Invalid(String),
}

impl Grid {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_gens(&self) -> usize {
        self.gens.len()
    }

    /// Map from external bus id to position in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated grid has a slack bus")
    }

    /// Check every structural invariant, in a deterministic order.
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.base_mva > 0.0) {
            return Err(GridError::Invalid(format!("base_mva must be positive, got {}", self.base_mva)));
        }
        let mut index = HashMap::with_capacity(self.buses.len());
        for (i, bus) in self.buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(GridError::DuplicateBusId(bus.id));
            }
            if !(bus.base_kv > 0.0) {
                return Err(GridError::Invalid(format!("bus {} base_kv must be positive", bus.id)));
            }
            if !(bus.vm_init > 0.0) {
                return Err(GridError::Invalid(format!("bus {} vm_init must be positive", bus.id)));
            }
            if !(bus.p_load.is_finite() && bus.q_load.is_finite()) {
                return Err(GridError::Invalid(format!("bus {} load must be finite", bus.id)));
            }
        }
        let slack_count = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack_count > 1 {
            return Err(GridError::MultipleSlack);
        }
        if slack_count == 0 {
            return Err(GridError::NoSlack);
        }
        for br in &self.branches {
            for bus in [br.from_bus, br.to_bus] {
                if !index.contains_key(&bus) {
                    return Err(GridError::DanglingReference { kind: "branch", bus });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(GridError::Invalid(format!(
                    "branch {}-{} connects a bus to itself",
                    br.from_bus, br.to_bus
                )));
            }
            if br.status && br.x == 0.0 {
                return Err(GridError::Invalid(format!(
                    "in-service branch {}-{} has zero reactance",
                    br.from_bus, br.to_bus
                )));
            }
        }
        for g in &self.gens {
            if !index.contains_key(&g.bus) {
                return Err(GridError::DanglingReference { kind: "gen", bus: g.bus });
            }
            if g.p_min > g.p_max {
                return Err(GridError::Invalid(format!(
                    "gen at bus {} has p_min {} > p_max {}",
                    g.bus, g.p_min, g.p_max
                )));
            }
        }
        Ok(())
    }

    /// In-service generators grouped by bus position, preserving gen order.
    pub fn gens_by_bus(&self) -> HashMap<usize, Vec<usize>> {
        let index = self.bus_index();
        let mut map: HashMap<usize, Vec<usize>> = HashMap::new();
        for (g, gen) in self.gens.iter().enumerate() {
            if gen.status {
                map.entry(index[&gen.bus]).or_default().push(g);
            }
        }
        map
    }
}
