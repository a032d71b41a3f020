# -*- encoding: utf-8 -*-

