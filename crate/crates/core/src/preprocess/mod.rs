//! Preprocessing stage: anchor selection, dual-view triplet learning and
//! orthogonal-projection purification of the syntactic channels.

pub mod anchors;
pub mod projection;
pub mod triplet;

pub use anchors::{anchor_count, anchor_scores, select_anchors};
pub use projection::{project, project_rows, purify};
pub use triplet::{
    build_triplets, label_pos_neg, triplet_loss, AnchorTriplet, DualViewGraph, Slot, TripletSet,
    View,
};
