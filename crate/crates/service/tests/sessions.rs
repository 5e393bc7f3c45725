mod common;

#[path = "common/sessions.rs"]
mod sessions;

use proptest::prelude::*;
use sessions::{run_sessions, SessionParams};

#[test]
fn fixed_session_exercises_every_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_sessions(
        dir.path(),
        SessionParams {
            seed: 3,
            frames: 4,
            raters: 4,
            steps: 60,
        },
    )
    .unwrap();
    assert!(
        out.refinements > 0 && out.ratings > 0 && out.stale_attempts > 0 && out.restarts > 0,
        "{out:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn concurrent_sessions_keep_integrity(seed in any::<u64>(), frames in 1usize..5, raters in 2usize..6, steps in 5usize..40) {
        let dir = tempfile::tempdir().unwrap();
        let r = run_sessions(dir.path(), SessionParams { seed, frames, raters, steps });
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }
}
