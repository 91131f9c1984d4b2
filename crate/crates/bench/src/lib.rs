//! Deterministic inputs shared by the benchmarks.

use masc::detections::{Detection, PlantClass};
use masc::synth::{generate_field, generate_flight, FieldSpec, FlightSpec, SynthField, SynthFlight};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` boxes scattered over a `side x side` square, with heavy overlap.
pub fn random_boxes(n: usize, side: f64, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            Detection::new(
                PlantClass::ALL[rng.random_range(0..3)],
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
                rng.random_range(10.0..30.0),
                rng.random_range(10.0..30.0),
                rng.random_range(0.0..1.0),
            )
            .with_source((i % 8) as u32, i as u32)
        })
        .collect()
}

/// Nursery field with the default geometry and `plants` positions per row.
pub fn field(ranges: usize, rows: usize, plants: usize) -> SynthField {
    generate_field(&FieldSpec {
        ranges,
        rows_per_range: rows,
        plants_per_row: (plants, plants),
        ..FieldSpec::default()
    })
    .expect("valid field spec")
}

/// Noise-free flight over `field` with the given frame size and stride.
pub fn flight(field: &SynthField, frame: usize, stride: usize) -> SynthFlight {
    let spec = FlightSpec {
        frame_size: (frame, frame),
        stride: (stride, stride),
        ..FlightSpec::default()
    };
    generate_flight(&field.image, &field.detections, &spec).expect("valid flight spec")
}
