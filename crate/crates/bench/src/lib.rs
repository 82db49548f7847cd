//! Shared fixtures for the kernel benchmarks, sized like the desk preset.

use psz_core::objectives::BandProblem;
use psz_core::training::{sample_batch, TrainConfig};
use psz_core::{FrequencyGrid, GeneratorParams, StackedCoords};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub config: TrainConfig,
    pub grid: FrequencyGrid,
    pub problem: BandProblem,
    pub params: GeneratorParams,
    pub batch: Vec<StackedCoords>,
}

pub fn desk_fixture() -> Fixture {
    let config = TrainConfig::desk(7);
    let grid = config.grid.build().expect("desk grid");
    let problem = BandProblem::new(&grid, config.band, config.dims(), config.weights).expect("desk problem");
    let params = GeneratorParams::init(config.band, config.dims(), &config.arch, config.scene.bounds, config.seed).expect("desk generator");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_batch(&mut rng, &config.scene, config.batch_size);
    Fixture {
        config,
        grid,
        problem,
        params,
        batch,
    }
}
