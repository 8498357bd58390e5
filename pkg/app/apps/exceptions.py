class AppError(Exception):
    """Базовая ошибка приложений поверх TPP."""


class EmptyPath(AppError):
    """Нет ни одного звена пути."""


class StaleSamples(AppError):
    """Замеры фазы сбора старше периода обновления или отсутствуют."""


class Saturated(AppError):
    """В битмапе не осталось нулевых бит: оценка не определена."""


class TruncatedHistory(AppError):
    """hop_index вышел за число выделенных хопов."""
