use serde::{Deserialize, Serialize};

/// Semantic categories of the voxel world, in palette-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum SemanticLabel {
    Sign = 0,
    TrafficLight,
    ConstructionCone,
    Motorcyclist,
    Bicyclist,
    Pedestrian,
    Bicycle,
    Motorcycle,
    Car,
    Truck,
    Bus,
    OtherVehicle,
    Curb,
    LaneMarker,
    Vegetation,
    TreeTrunk,
    Walkable,
    Sidewalk,
    Building,
    Road,
    OtherGround,
    Undefined,
    Pole,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 23] = [
        SemanticLabel::Sign,
        SemanticLabel::TrafficLight,
        SemanticLabel::ConstructionCone,
        SemanticLabel::Motorcyclist,
        SemanticLabel::Bicyclist,
        SemanticLabel::Pedestrian,
        SemanticLabel::Bicycle,
        SemanticLabel::Motorcycle,
        SemanticLabel::Car,
        SemanticLabel::Truck,
        SemanticLabel::Bus,
        SemanticLabel::OtherVehicle,
        SemanticLabel::Curb,
        SemanticLabel::LaneMarker,
        SemanticLabel::Vegetation,
        SemanticLabel::TreeTrunk,
        SemanticLabel::Walkable,
        SemanticLabel::Sidewalk,
        SemanticLabel::Building,
        SemanticLabel::Road,
        SemanticLabel::OtherGround,
        SemanticLabel::Undefined,
        SemanticLabel::Pole,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// Labels that carry a per-object instance id.
    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            SemanticLabel::Car | SemanticLabel::Truck | SemanticLabel::Bus | SemanticLabel::OtherVehicle
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticLabel::Sign => "SIGN",
            SemanticLabel::TrafficLight => "TRAFFIC_LIGHT",
            SemanticLabel::ConstructionCone => "CONSTRUCTION_CONE",
            SemanticLabel::Motorcyclist => "MOTORCYCLIST",
            SemanticLabel::Bicyclist => "BICYCLIST",
            SemanticLabel::Pedestrian => "PEDESTRIAN",
            SemanticLabel::Bicycle => "BICYCLE",
            SemanticLabel::Motorcycle => "MOTORCYCLE",
            SemanticLabel::Car => "CAR",
            SemanticLabel::Truck => "TRUCK",
            SemanticLabel::Bus => "BUS",
            SemanticLabel::OtherVehicle => "OTHER_VEHICLE",
            SemanticLabel::Curb => "CURB",
            SemanticLabel::LaneMarker => "LANE_MARKER",
            SemanticLabel::Vegetation => "VEGETATION",
            SemanticLabel::TreeTrunk => "TREE_TRUNK",
            SemanticLabel::Walkable => "WALKABLE",
            SemanticLabel::Sidewalk => "SIDEWALK",
            SemanticLabel::Building => "BUILDING",
            SemanticLabel::Road => "ROAD",
            SemanticLabel::OtherGround => "OTHER_GROUND",
            SemanticLabel::Undefined => "UNDEFINED",
            SemanticLabel::Pole => "POLE",
        }
    }
}
