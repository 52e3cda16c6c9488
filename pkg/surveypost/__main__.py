# -*- coding: utf-8 -*-
import sys

from surveypost.cli import main


sys.exit(main())
