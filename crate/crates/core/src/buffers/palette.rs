use std::sync::OnceLock;

use crate::rng;
use crate::sparse_grid::{SemanticLabel, SemanticVoxel};

pub type Rgb = [f64; 3];

/// Fixed semantic colors in [0, 1]. Vehicles get per-instance colors
/// instead; their table entry is the ramp's mid-tone.
pub fn semantic_color(label: SemanticLabel) -> Rgb {
    use SemanticLabel::*;
    match label {
        Sign | TrafficLight | ConstructionCone => [0.4, 0.7608, 0.6471],
        Motorcyclist | Bicyclist | Pedestrian | Bicycle | Motorcycle => [0.9882, 0.5529, 0.3843],
        Car | Truck | Bus | OtherVehicle => [0.7373, 0.5020, 0.7412],
        Curb | LaneMarker => [1.0, 0.8510, 0.1843],
        Vegetation | TreeTrunk => [0.3020, 0.6863, 0.2902],
        Walkable | Sidewalk => [0.5529, 0.6275, 0.7961],
        Building => [0.8980, 0.7686, 0.5804],
        Road | OtherGround => [0.7020, 0.7020, 0.7020],
        Undefined => [0.1216, 0.4706, 0.7059],
        Pole => [0.8000, 0.9216, 0.7725],
    }
}

/// Color used for rays that hit nothing.
pub fn miss_color() -> Rgb {
    semantic_color(SemanticLabel::Undefined)
}

const PURD_STOPS: [Rgb; 9] = [
    [0.968_627_450_980_392_2, 0.956_862_745_098_039_2, 0.976_470_588_235_294_1],
    [0.905_882_352_941_176_5, 0.882_352_941_176_470_6, 0.937_254_901_960_784_3],
    [0.831_372_549_019_607_9, 0.725_490_196_078_431_4, 0.854_901_960_784_313_7],
    [0.788_235_294_117_647_1, 0.580_392_156_862_745_1, 0.780_392_156_862_745_1],
    [0.874_509_803_921_568_6, 0.396_078_431_372_549_0, 0.690_196_078_431_372_5],
    [0.905_882_352_941_176_5, 0.160_784_313_725_490_2, 0.541_176_470_588_235_3],
    [0.807_843_137_254_902_0, 0.070_588_235_294_117_6, 0.337_254_901_960_784_3],
    [0.596_078_431_372_549_0, 0.0, 0.262_745_098_039_215_7],
    [0.403_921_568_627_451_0, 0.0, 0.121_568_627_450_980_4],
];

pub const RAMP_LEN: usize = 256;

/// 256-entry purple-red sequential ramp, linearly interpolated between nine
/// evenly spaced stops.
pub fn instance_ramp() -> &'static [Rgb; RAMP_LEN] {
    static RAMP: OnceLock<[Rgb; RAMP_LEN]> = OnceLock::new();
    RAMP.get_or_init(|| {
        let mut out = [[0.0; 3]; RAMP_LEN];
        let segments = (PURD_STOPS.len() - 1) as f64;
        for (i, c) in out.iter_mut().enumerate() {
            let x = i as f64 / (RAMP_LEN - 1) as f64 * segments;
            let s = (x.floor() as usize).min(PURD_STOPS.len() - 2);
            let f = x - s as f64;
            for a in 0..3 {
                c[a] = PURD_STOPS[s][a] + f * (PURD_STOPS[s + 1][a] - PURD_STOPS[s][a]);
            }
        }
        out
    })
}

pub fn instance_color(instance_id: u32) -> Rgb {
    instance_ramp()[rng::hash_u32(instance_id) as usize % RAMP_LEN]
}

/// Buffer color of a voxel: instance color for vehicles, table color otherwise.
pub fn voxel_color(voxel: &SemanticVoxel) -> Rgb {
    match voxel.instance_id() {
        Some(id) if voxel.label().is_vehicle() => instance_color(id),
        _ => semantic_color(voxel.label()),
    }
}

/// Affine map from [0, 1] to [-1, 1].
pub fn rescale(c: Rgb) -> Rgb {
    c.map(|v| 2.0 * v - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        let r = instance_ramp();
        assert_eq!(r[0], PURD_STOPS[0]);
        assert_eq!(r[255], PURD_STOPS[8]);
    }

    #[test]
    fn groups_are_distinct() {
        let reps = [
            SemanticLabel::Sign,
            SemanticLabel::Pedestrian,
            SemanticLabel::Car,
            SemanticLabel::Curb,
            SemanticLabel::Vegetation,
            SemanticLabel::Sidewalk,
            SemanticLabel::Building,
            SemanticLabel::Road,
            SemanticLabel::Undefined,
            SemanticLabel::Pole,
        ];
        for (i, a) in reps.iter().enumerate() {
            for b in &reps[i + 1..] {
                assert_ne!(semantic_color(*a), semantic_color(*b));
            }
        }
    }
}
