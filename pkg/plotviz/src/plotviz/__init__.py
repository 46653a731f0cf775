from .figures import (PlotSpec, PlotvizError, plot_scaling,
                      plot_toggle_compare, read_rows, render, split_series)

__all__ = ["PlotSpec", "PlotvizError", "plot_scaling",
           "plot_toggle_compare", "read_rows", "render", "split_series"]
