//! Instances shared by the benchmarks under `benches/`.

use mpcard_core::fixtures;
use mpcard_core::grid::LinearizedGrid;
use mpcard_core::program::{build_program, BuildOptions, CardinalityLimit, ConverterSpec, TimestepInput, TimestepModel};
use mpcard_core::ConicProgramIR;

/// IEEE 33-bus timestep at `load` times peak demand with the four
/// standard terminals.
pub fn ieee33_program(n: CardinalityLimit, load: f64) -> ConicProgramIR {
    let net = fixtures::ieee33();
    let pcc = fixtures::IEEE33_PCC;
    let grid = LinearizedGrid::build(&net, &pcc).expect("fixture linearizes");
    let conv = ConverterSpec::new(pcc.iter().map(|s| s.to_string()).collect(), 1.0);
    let mut ts = TimestepInput::unloaded(grid.bus_ids.len(), 0.9, 1.05, n);
    ts.background = net.peak_demand_injection().iter().map(|s| s * load).collect();
    let model = TimestepModel::new(&grid, &conv, &ts).expect("valid timestep");
    build_program(&model, BuildOptions::default()).expect("program builds")
}
