#![no_main]

use libfuzzer_sys::fuzz_target;

// Validation does arithmetic on untrusted floats (grid alignment, horizons);
// it must reject bad input with an error, never panic.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = sddekit_cli::config::parse(text) {
        if cfg.validate().is_ok() {
            let grid = cfg.time_grid().expect("validated grid");
            assert!(grid.horizon_steps() <= sddekit_cli::config::MAX_GRID_STEPS);
            let _ = cfg.output_file();
        }
    }
});
