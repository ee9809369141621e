from simulation.forecasts import (
    ForecastSet, PriceSeries, build_forecasts, realize, hour_of_day, tou_price, load_price_series,
)
