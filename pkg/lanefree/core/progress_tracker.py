from collections.abc import Iterable

from tqdm import tqdm


class ProgressTracker(tqdm):
    """tqdm bar over simulation steps that shows the running plan count"""

    def __init__(
        self,
        process: str,
        iterable: Iterable,
        scenario: str,
        *args,
        **kwargs,
    ):
        self.process = process
        self.scenario = scenario
        self.count: int | float = 0
        super().__init__(iterable, *args, **kwargs)

    def manual_update(self, count: int | float | None = None):
        if count is not None:
            self.count = count
            self.set_postfix(plans=count, refresh=False)


class ProgressManager:
    """Creates the progress bars of one cli invocation"""

    def __init__(self, disable: bool = False):
        self.disable = disable

    def create_sub_progress(
        self, iter: Iterable, scenario: str, process: str, *args, **kwargs
    ) -> ProgressTracker:
        """Create a progress tracker"""
        kwargs.setdefault("disable", self.disable)
        return ProgressTracker(
            process,
            iter,
            scenario,
            *args,
            desc=f"{process} {scenario}",
            **kwargs,
        )
