import os
import sys

from dotenv import load_dotenv
from loguru import logger

from rqrag.cli import run_command


if __name__ == '__main__':
    # 加载环境变量
    load_dotenv()

    # 配置日志级别
    log_level = os.getenv("LOG_LEVEL", "INFO").upper()
    logger.remove()  # 移除默认handler
    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
    )
    log_file = os.getenv("LOG_FILE")
    if log_file:
        logger.add(log_file, level=log_level, rotation=os.getenv("LOG_ROTATION", "10 MB"), encoding="utf-8")
    logger.debug(f"log level: {log_level}")

    sys.exit(run_command(sys.argv[1:]))
