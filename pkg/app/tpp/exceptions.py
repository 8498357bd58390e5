class TppError(Exception):
    """Базовая ошибка ISA: ассемблер, кодек, переписывание программы."""


class AssemblyError(TppError):
    """Исходный текст TPP не собирается."""


class UnknownMnemonic(AssemblyError):
    """Мнемоника адреса или опкода отсутствует в стандартной карте памяти."""


class TooManyInstructions(AssemblyError):
    """В программе больше инструкций, чем допускает бюджет TPP."""


class NoInstructions(AssemblyError):
    """Пустая программа: ни одной инструкции."""


class BadOperandArity(AssemblyError):
    """Число или вид операндов не совпадает с сигнатурой опкода."""


class MemoryTooLarge(AssemblyError):
    """Закодированный TPP не помещается в бюджет MTU."""


class DecodeError(TppError):
    """Байты не разбираются как TPP."""


class BadMagic(DecodeError):
    """Не TPP-обрамление (ethertype/UDP-порт) или неизвестная версия заголовка."""


class ChecksumMismatch(DecodeError):
    """Контрольная сумма заголовка и инструкций не сошлась."""


class TruncatedPacket(DecodeError):
    """Буфер короче, чем объявляют поля заголовка."""


class BadOperand(DecodeError):
    """Зарезервированный режим операнда или неизвестный опкод."""


class MemoryOverflow(TppError):
    """PUSH/POP выходят за слот хопа или за mem_len."""
