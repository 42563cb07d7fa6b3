"""Vertical power-flow forecasting with a two-branch LSTM and daily retraining."""

__version__ = "0.1.0"

from .grid_data import (  # noqa: F401
    FeatureFrame,
    PowerSeries,
    SunPosition,
    TransformerMeta,
    WeatherRecord,
    compute_sun_position,
    calendar_features,
    align_weather,
    load_power_csv,
    load_weather_csv,
)
from .preprocess import (  # noqa: F401
    QuantileScaler,
    SplitSpec,
    WindowSample,
    WindowSet,
    ZScoreParams,
    apply_zscore,
    fit_quantile_scaler,
    fit_zscore,
    invert_zscore,
    make_batches,
    make_windows,
    split_by_dates,
)
from .forecaster import (  # noqa: F401
    ArchitectureSpec,
    ForecastSet,
    ModelParams,
    TrainingConfig,
    build_model,
    predict,
    rolling_forecast,
    train_initial,
)
from .updates import (  # noqa: F401
    UpdateStrategy,
    canonical_strategies,
    daily_update,
    run_strategy_grid,
    run_update_simulation,
)
from .baselines import persistence_last, persistence_last_day  # noqa: F401
from .evaluation import (  # noqa: F401
    CANONICAL_HORIZONS_H,
    HorizonReport,
    ImprovementRecord,
    compare_models,
    improvement,
    nrmse,
    pearson,
)
from .synthgrid import (  # noqa: F401
    CapacityEvent,
    ScenarioSpec,
    SyntheticBundle,
    canonical_fleet,
    generate_scenario,
    inject_status_noise,
    wind_power_curve,
)
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
