//! Building blocks for grounded image captions: geometry and scene types,
//! the `<gdo>/<gda>/<gdl>` markup, stuff-region decomposition, reading-order
//! id assignment, caption metrics, the refinement loop and the on-disk store.

pub mod markup;
pub mod metrics;
pub mod model;
pub mod ordering;
pub mod par;
pub mod refine;
pub mod region;
pub mod store;

pub use markup::{parse_caption, referenced_ids, serialize_caption, CaptionAst, Diagnostics};
pub use model::{BBox, Detection, DetectionKind, Frame, Mask, SceneObject, Split};
pub use par::Exec;
