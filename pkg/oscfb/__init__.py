from oscfb.utils.config import settings

__version__ = settings.VERSION
